//! Experiment configuration: bandwidth grid, model and training
//! hyper-parameters, seed table, data source, and the derived dimension
//! bookkeeping shared by the codec, trainer, and evaluation harness.
//!
//! Configs are TOML files. [`ExperimentConfig::load`] parses and validates;
//! every derived quantity (token counts, per-level symbol budgets, kept
//! rows/columns) comes from [`ExperimentConfig::dimensions`] so the codec,
//! channel, and evaluation code never re-derive shapes independently.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that float-valued config entries
/// (bandwidth ratios) agree with their exact grid values.
const RHO_TOL: f64 = 1e-9;

/// How codeword coordinates are dropped as the bandwidth shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// Keep the first `n_f` feature rows of every token.
    VaryingFeatures,
    /// Keep all feature rows of the first `n_t` tokens.
    VaryingPatches,
}

/// Operating scheme of the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecScheme {
    /// One model serves every `(rho_l, snr)` pair; codewords are independent
    /// per level.
    AdaptiveBandwidth,
    /// Codewords are nested: level `l` is the first `l` blocks of the
    /// full-rate codeword, each block power-normalized on its own, so earlier
    /// transmissions remain valid prefixes of later ones.
    SuccessiveRefinement,
}

impl fmt::Display for CodecScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecScheme::AdaptiveBandwidth => write!(f, "adaptive-bandwidth"),
            CodecScheme::SuccessiveRefinement => write!(f, "successive-refinement"),
        }
    }
}

/// Uniform bandwidth-ratio grid `rho_l = l * rho_1`, `l = 1..=levels`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthGrid {
    /// Number of grid levels `L`.
    pub levels: usize,
    /// Masking mode used on the full-rate codeword.
    pub mode: GridMode,
    /// Largest ratio `rho_L`. Optional in the file when `rho` is given.
    #[serde(default)]
    pub rho_max: Option<f64>,
    /// Explicit ratio list; validated to be uniform and snapped to exact
    /// `l * rho_max / levels`. Filled in during validation when absent.
    #[serde(default)]
    pub rho: Vec<f64>,
}

impl BandwidthGrid {
    /// Ratio for 1-based level `l`.
    pub fn rho_at(&self, l: usize) -> f64 {
        self.rho[l - 1]
    }

    /// Smallest grid ratio `rho_1`.
    pub fn rho_first(&self) -> f64 {
        self.rho[0]
    }

    /// 1-based level whose ratio matches `rho` within tolerance, if any.
    pub fn level_of(&self, rho: f64) -> Option<usize> {
        self.rho
            .iter()
            .position(|&r| (r - rho).abs() <= RHO_TOL.max(r * RHO_TOL))
            .map(|i| i + 1)
    }

    fn validate(&mut self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("grid.levels must be at least 1"));
        }
        if self.rho.is_empty() {
            let max = self.rho_max.ok_or_else(|| {
                Error::config("grid needs either rho_max or an explicit rho list")
            })?;
            self.rho = (1..=self.levels)
                .map(|l| l as f64 * max / self.levels as f64)
                .collect();
        } else {
            if self.rho.len() != self.levels {
                return Err(Error::Config(format!(
                    "grid.rho has {} entries but grid.levels = {}",
                    self.rho.len(),
                    self.levels
                )));
            }
            let max = *self.rho.last().unwrap();
            for (i, &r) in self.rho.iter().enumerate() {
                let exact = (i + 1) as f64 * max / self.levels as f64;
                if (r - exact).abs() > RHO_TOL.max(exact * RHO_TOL) {
                    return Err(Error::Config(format!(
                        "grid.rho[{i}] = {r} is not on the uniform grid l*rho_1 \
                         (expected {exact})"
                    )));
                }
            }
            // Snap to the exact uniform values so downstream integer checks
            // are not at the mercy of decimal rounding in the file.
            self.rho = (1..=self.levels)
                .map(|l| l as f64 * max / self.levels as f64)
                .collect();
        }
        let max = *self.rho.last().unwrap();
        if !(max > 0.0 && max <= 1.0) {
            return Err(Error::Config(format!(
                "grid rho_max = {max} must lie in (0, 1]"
            )));
        }
        self.rho_max = Some(max);
        Ok(())
    }
}

/// Architecture hyper-parameters of the Swin encoder/decoder pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of encoder stages `I`; the decoder mirrors them in reverse.
    #[serde(default = "default_stages")]
    pub stages: usize,
    /// Transformer width `c` inside every stage.
    #[serde(default = "default_features")]
    pub features: usize,
    /// Attention window side length.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Swin blocks per stage (`M_i`); each entry must be even because blocks
    /// come in regular/shifted pairs.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<usize>,
    /// Attention heads per stage. The first entry must divide both
    /// `features + side_width` (the encoder's first stage runs on tokens
    /// carrying the concatenated side embedding) and `features` (the decoder
    /// mirrors the list, so the same entry attends at plain width); later
    /// entries must divide `features`.
    #[serde(default = "default_heads")]
    pub heads: Vec<usize>,
    /// Side length of the square pixel patches embedded into tokens.
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Output width `n_u` of the side-info embedding.
    #[serde(default = "default_side_width")]
    pub side_width: usize,
    /// Hidden-layer expansion factor of the per-block MLPs.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    /// Source image shape `[channels, height, width]`.
    #[serde(default = "default_image")]
    pub image: [usize; 3],
}

fn default_stages() -> usize {
    2
}
fn default_features() -> usize {
    256
}
fn default_window() -> usize {
    8
}
fn default_blocks() -> Vec<usize> {
    vec![4, 2]
}
fn default_heads() -> Vec<usize> {
    vec![2, 8]
}
fn default_patch() -> usize {
    2
}
fn default_side_width() -> usize {
    2
}
fn default_mlp_ratio() -> f64 {
    4.0
}
fn default_image() -> [usize; 3] {
    [3, 32, 32]
}

impl ModelConfig {
    /// Token-grid side lengths after patch embedding and all merges.
    pub fn final_grid(&self) -> (usize, usize) {
        let down = self.patch << (self.stages - 1);
        (self.image[1] / down, self.image[2] / down)
    }

    fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::config("model.stages must be at least 1"));
        }
        if self.blocks.len() != self.stages || self.heads.len() != self.stages {
            return Err(Error::Config(format!(
                "model.blocks and model.heads must each have one entry per \
                 stage ({} given, {} stages)",
                self.blocks.len(),
                self.stages
            )));
        }
        for (i, &m) in self.blocks.iter().enumerate() {
            if m == 0 || m % 2 != 0 {
                return Err(Error::Config(format!(
                    "blocks per stage must be even and nonzero (stage {i} has {m}); \
                     blocks come in regular/shifted pairs"
                )));
            }
        }
        let stage_widths = [self.features + self.side_width, self.features];
        for (i, &h) in self.heads.iter().enumerate() {
            // The encoder's first stage runs at features + side_width; every
            // other stage, and every decoder stage, runs at features. The
            // decoder mirrors the head list, so heads[0] attends at both
            // widths.
            let widths = if i == 0 { &stage_widths[..] } else { &stage_widths[1..] };
            for &width in widths {
                if h == 0 || width % h != 0 {
                    let origin = if width == self.features {
                        "features".to_string()
                    } else {
                        format!("features {} + side_width {}", self.features, self.side_width)
                    };
                    return Err(Error::Config(format!(
                        "model.heads[{i}] = {h} must divide the stage width \
                         {width} ({origin})"
                    )));
                }
            }
        }
        if self.patch == 0 {
            return Err(Error::config("model.patch must be at least 1"));
        }
        let [ch, h, w] = self.image;
        if ch == 0 || h == 0 || w == 0 {
            return Err(Error::config("model.image dimensions must be nonzero"));
        }
        let down = self
            .patch
            .checked_shl(self.stages as u32 - 1)
            .unwrap_or(usize::MAX);
        if h % down != 0 || w % down != 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} is not divisible by patch * 2^(stages-1) = {down}"
            )));
        }
        let (gh, gw) = self.final_grid();
        if self.window == 0 {
            return Err(Error::config("model.window must be at least 1"));
        }
        if self.window > gh.min(gw) {
            return Err(Error::Config(format!(
                "window {} exceeds the final {gh}x{gw} feature grid; reduce the \
                 window or the stage count",
                self.window
            )));
        }
        if self.side_width == 0 {
            return Err(Error::config("model.side_width must be at least 1"));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::config("model.mlp_ratio must be positive"));
        }
        Ok(())
    }
}

/// Optimization schedule and channel-condition ranges used for training.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Multiplicative LR decay applied when validation stalls.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Epochs without validation improvement before the LR decays.
    #[serde(default = "default_lr_patience")]
    pub lr_patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Early-stop patience for the adaptive (all-levels) model.
    #[serde(default = "default_patience_adaptive")]
    pub patience_adaptive: usize,
    /// Early-stop patience for single-level upper-bound models.
    #[serde(default = "default_patience_nonadaptive")]
    pub patience_nonadaptive: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Training SNR interval in dB; each batch samples uniformly from it.
    #[serde(default = "default_snr_min")]
    pub snr_min: f64,
    #[serde(default = "default_snr_max")]
    pub snr_max: f64,
    /// Validation SNR; defaults to the midpoint of the training interval.
    #[serde(default)]
    pub snr_val: Option<f64>,
    /// Weight-policy sharpness.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight-policy PSNR-gap offset in dB.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Weight-policy cap.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Additionally snapshot parameters every this many epochs (0 = only the
    /// best checkpoint is kept).
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_lr_decay() -> f64 {
    0.95
}
fn default_lr_patience() -> usize {
    20
}
fn default_max_epochs() -> usize {
    4000
}
fn default_patience_adaptive() -> usize {
    80
}
fn default_patience_nonadaptive() -> usize {
    60
}
fn default_batch() -> usize {
    32
}
fn default_snr_min() -> f64 {
    4.0
}
fn default_snr_max() -> f64 {
    10.0
}
fn default_alpha() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    0.25
}
fn default_gamma() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty train table deserializes via defaults")
    }
}

impl TrainConfig {
    /// Validation SNR in dB (midpoint of the training interval by default).
    pub fn snr_val(&self) -> f64 {
        self.snr_val.unwrap_or(0.5 * (self.snr_min + self.snr_max))
    }

    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config("train.lr must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("train.lr_decay must lie in (0, 1]"));
        }
        if self.lr_patience == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "train.lr_patience and train.max_epochs must be at least 1",
            ));
        }
        if self.batch == 0 {
            return Err(Error::config("train.batch must be at least 1"));
        }
        if self.snr_min > self.snr_max {
            return Err(Error::Config(format!(
                "train.snr_min = {} exceeds train.snr_max = {}",
                self.snr_min, self.snr_max
            )));
        }
        if let Some(v) = self.snr_val {
            if v < self.snr_min || v > self.snr_max {
                log::warn!(
                    "validation SNR {v} dB lies outside the training interval \
                     [{}, {}] dB",
                    self.snr_min,
                    self.snr_max
                );
            }
        }
        if self.alpha <= 0.0 {
            return Err(Error::config("train.alpha must be positive"));
        }
        if self.beta < 0.0 {
            return Err(Error::config("train.beta must be nonnegative"));
        }
        if self.gamma <= 0.0 {
            return Err(Error::config("train.gamma must be positive"));
        }
        Ok(())
    }
}

/// Independent seed roles so e.g. re-drawing channel noise never perturbs
/// parameter initialization or batch order.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTable {
    /// Parameter initialization.
    #[serde(default = "default_seed_init")]
    pub init: u64,
    /// Channel noise (training, validation, evaluation).
    #[serde(default = "default_seed_channel")]
    pub channel: u64,
    /// Per-batch `(l, snr)` condition sampling.
    #[serde(default = "default_seed_sampling")]
    pub sampling: u64,
    /// Dataset splits, shuffles, and the synthetic corpus.
    #[serde(default = "default_seed_data")]
    pub data: u64,
}

fn default_seed_init() -> u64 {
    11
}
fn default_seed_channel() -> u64 {
    12
}
fn default_seed_sampling() -> u64 {
    13
}
fn default_seed_data() -> u64 {
    14
}

impl Default for SeedTable {
    fn default() -> Self {
        SeedTable {
            init: default_seed_init(),
            channel: default_seed_channel(),
            sampling: default_seed_sampling(),
            data: default_seed_data(),
        }
    }
}

impl SeedTable {
    /// Shift every role by `offset`, keeping roles distinct. Used by the CLI
    /// `--seed` override and by repeat-evaluation runs.
    pub fn offset(&self, offset: u64) -> SeedTable {
        SeedTable {
            init: self.init.wrapping_add(offset),
            channel: self.channel.wrapping_add(offset),
            sampling: self.sampling.wrapping_add(offset),
            data: self.data.wrapping_add(offset),
        }
    }
}

/// Where training/evaluation images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// CIFAR-10 binary batches (`data_batch_*.bin`, `test_batch.bin`).
    CifarBin,
    /// Seeded synthetic corpus generated in-process.
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_source")]
    pub source: DataSource,
    /// Directory holding the CIFAR-10 binary batches (ignored for synthetic).
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_train_n")]
    pub train: usize,
    #[serde(default = "default_val_n")]
    pub val: usize,
    #[serde(default = "default_test_n")]
    pub test: usize,
}

fn default_source() -> DataSource {
    DataSource::CifarBin
}
fn default_train_n() -> usize {
    40_000
}
fn default_val_n() -> usize {
    10_000
}
fn default_test_n() -> usize {
    10_000
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: default_source(),
            path: None,
            train: default_train_n(),
            val: default_val_n(),
            test: default_test_n(),
        }
    }
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::config(
                "data.train, data.val and data.test must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_scheme")]
    pub scheme: CodecScheme,
    pub grid: BandwidthGrid,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seeds: SeedTable,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_scheme() -> CodecScheme {
    CodecScheme::AdaptiveBandwidth
}

fn default_model() -> ModelConfig {
    toml::from_str("").expect("empty model table deserializes via defaults")
}

impl ExperimentConfig {
    /// Parse and validate a TOML config string.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    fn validate(&mut self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        // Dimension derivation performs the remaining cross-field checks.
        self.dimensions()?;
        Ok(())
    }

    /// Canonical TOML serialization of the validated config. Field order is
    /// fixed by the struct definitions, so equal configs serialize equally.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("validated config serializes")
    }

    /// Hex SHA-256 of the canonical serialization; identifies checkpoints.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Hash of the architecture identity only (scheme + grid + model). Two
    /// runs that differ just in schedule or seeds share this hash, so
    /// upper-bound registry entries remain valid across them.
    pub fn model_hash(&self) -> String {
        let arch = serde_json::json!({
            "scheme": self.scheme,
            "grid": {
                "levels": self.grid.levels,
                "mode": self.grid.mode,
                "rho": self.grid.rho,
            },
            "model": self.model,
        });
        hex(&Sha256::digest(arch.to_string().as_bytes()))
    }

    /// Derive every dimension the pipeline needs from the config.
    pub fn dimensions(&self) -> Result<DimensionTable> {
        DimensionTable::derive(self)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-level symbol bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDims {
    /// 1-based grid level.
    pub l: usize,
    /// Complex symbols transmitted at this level: `k_l = rho_l * N`.
    pub complex_symbols: usize,
    /// Real coordinates kept by the mask: `2 * k_l`.
    pub real_len: usize,
    /// Feature rows kept per token (varying-features mode).
    pub kept_features: Option<usize>,
    /// Tokens kept (varying-patches mode).
    pub kept_tokens: Option<usize>,
}

/// Dimensions derived from an [`ExperimentConfig`].
///
/// `source_dim` is the pixel count `N`, `token_count` the flattened size
/// `N_T` of the final feature grid, and `feature_dim` the codeword rows
/// `N_F = 2 * rho_max * N / N_T`, i.e. the full-rate codeword is an
/// `N_F x N_T` real matrix read as `N_F/2` complex rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionTable {
    pub source_dim: usize,
    pub token_count: usize,
    pub feature_dim: usize,
    /// Final feature-grid height/width (`token_count = grid_h * grid_w`).
    pub grid_h: usize,
    pub grid_w: usize,
    /// Real coordinates per successive-refinement block: `2 * rho_1 * N`.
    pub block_reals: usize,
    pub levels: Vec<LevelDims>,
}

impl DimensionTable {
    fn derive(cfg: &ExperimentConfig) -> Result<Self> {
        let [ch, h, w] = cfg.model.image;
        let source_dim = ch * h * w;
        let (grid_h, grid_w) = cfg.model.final_grid();
        let token_count = grid_h * grid_w;
        let levels_n = cfg.grid.levels;
        let rho_max = cfg.grid.rho_max.expect("validated grid has rho_max");

        // Top-level complex symbol budget k_L = rho_max * N must be integral.
        let k_max_f = rho_max * source_dim as f64;
        let k_max = k_max_f.round() as usize;
        if (k_max_f - k_max as f64).abs() > 1e-6 || k_max == 0 {
            return Err(Error::Config(format!(
                "rho_max * N = {k_max_f} is not a positive integer symbol count"
            )));
        }
        // Each level must get an integral budget: k_l = l * k_L / L.
        if k_max % levels_n != 0 {
            return Err(Error::Config(format!(
                "full-rate symbol count {k_max} is not divisible by {levels_n} \
                 grid levels"
            )));
        }
        let k_1 = k_max / levels_n;
        let real_max = 2 * k_max;
        if real_max % token_count != 0 {
            return Err(Error::Config(format!(
                "full-rate codeword length {real_max} is not divisible by the \
                 token count {token_count}"
            )));
        }
        let feature_dim = real_max / token_count;
        if feature_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "feature dimension {feature_dim} must be even so feature pairs \
                 form complex symbols"
            )));
        }

        let mut levels = Vec::with_capacity(levels_n);
        for l in 1..=levels_n {
            let k_l = l * k_1;
            let real_len = 2 * k_l;
            // Both splits are derived whenever they are integral; the config
            // only requires its own mode's split to exist.
            let kept_features = (real_len % token_count == 0
                && (real_len / token_count) % 2 == 0)
                .then(|| real_len / token_count);
            let kept_tokens = (real_len % feature_dim == 0).then(|| real_len / feature_dim);
            match cfg.grid.mode {
                GridMode::VaryingFeatures if kept_features.is_none() => {
                    return Err(Error::Config(format!(
                        "level {l}: codeword length {real_len} does not split \
                         into an even number of feature rows over \
                         {token_count} tokens"
                    )));
                }
                GridMode::VaryingPatches if kept_tokens.is_none() => {
                    return Err(Error::Config(format!(
                        "level {l}: codeword length {real_len} is not a \
                         multiple of the feature dimension {feature_dim}"
                    )));
                }
                _ => {}
            }
            levels.push(LevelDims {
                l,
                complex_symbols: k_l,
                real_len,
                kept_features,
                kept_tokens,
            });
        }

        Ok(DimensionTable {
            source_dim,
            token_count,
            feature_dim,
            grid_h,
            grid_w,
            block_reals: 2 * k_1,
            levels,
        })
    }

    /// Bookkeeping for 1-based level `l`.
    pub fn level(&self, l: usize) -> Result<&LevelDims> {
        self.levels.get(l.wrapping_sub(1)).ok_or_else(|| {
            Error::Eval(format!(
                "level {l} is off the grid (valid levels: 1..={})",
                self.levels.len()
            ))
        })
    }
}

impl fmt::Display for DimensionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "N = {}  N_T = {} ({}x{})  N_F = {}",
            self.source_dim, self.token_count, self.grid_h, self.grid_w, self.feature_dim
        )?;
        writeln!(f, "{:>5} {:>10} {:>10} {:>8} {:>8}", "l", "symbols", "reals", "n_f", "n_t")?;
        for lv in &self.levels {
            writeln!(
                f,
                "{:>5} {:>10} {:>10} {:>8} {:>8}",
                lv.l,
                lv.complex_symbols,
                lv.real_len,
                lv.kept_features.map_or("-".into(), |v| v.to_string()),
                lv.kept_tokens.map_or("-".into(), |v| v.to_string()),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_config(levels: usize, rho_max: f64) -> String {
        format!(
            "[grid]\nlevels = {levels}\nrho_max = {rho_max}\nmode = \"varying-features\"\n"
        )
    }

    #[test]
    fn four_level_grid_dimensions() {
        let cfg = ExperimentConfig::from_toml_str(&grid_config(4, 0.25)).unwrap();
        let dims = cfg.dimensions().unwrap();
        assert_eq!(dims.source_dim, 3072);
        assert_eq!(dims.token_count, 64);
        assert_eq!((dims.grid_h, dims.grid_w), (8, 8));
        assert_eq!(dims.feature_dim, 24);
        let n_f: Vec<usize> = dims.levels.iter().map(|l| l.kept_features.unwrap()).collect();
        assert_eq!(n_f, vec![6, 12, 18, 24]);
        let k: Vec<usize> = dims.levels.iter().map(|l| l.complex_symbols).collect();
        assert_eq!(k, vec![192, 384, 576, 768]);
        assert_eq!(dims.block_reals, 384);
    }

    #[test]
    fn six_level_grid_dimensions() {
        let cfg = ExperimentConfig::from_toml_str(&grid_config(6, 0.25)).unwrap();
        let dims = cfg.dimensions().unwrap();
        assert_eq!(dims.feature_dim, 24);
        let n_f: Vec<usize> = dims.levels.iter().map(|l| l.kept_features.unwrap()).collect();
        assert_eq!(n_f, vec![4, 8, 12, 16, 20, 24]);
    }

    #[test]
    fn varying_patches_dimensions() {
        let text = "[grid]\nlevels = 4\nrho_max = 0.25\nmode = \"varying-patches\"\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let dims = cfg.dimensions().unwrap();
        let n_t: Vec<usize> = dims.levels.iter().map(|l| l.kept_tokens.unwrap()).collect();
        assert_eq!(n_t, vec![16, 32, 48, 64]);
    }

    #[test]
    fn explicit_rho_list_round_trips() {
        let text = "[grid]\nlevels = 4\nrho = [0.0625, 0.125, 0.1875, 0.25]\n\
                    mode = \"varying-features\"\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.grid.rho_max, Some(0.25));
        assert_eq!(cfg.grid.rho_at(3), 0.1875);

        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again.config_hash(), cfg.config_hash());
    }

    #[test]
    fn non_uniform_rho_rejected() {
        let text = "[grid]\nlevels = 3\nrho = [0.1, 0.15, 0.25]\nmode = \"varying-features\"\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("uniform"), "{err}");
    }

    #[test]
    fn odd_block_count_rejected() {
        let text = format!("{}[model]\nblocks = [3, 2]\n", grid_config(4, 0.25));
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("must be even"), "{err}");
    }

    #[test]
    fn indivisible_heads_rejected() {
        let text = format!("{}[model]\nfeatures = 34\nheads = [4, 4]\n", grid_config(4, 0.25));
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("divide"), "{err}");
    }

    #[test]
    fn oversized_window_rejected() {
        let text = format!("{}[model]\nwindow = 16\n", grid_config(4, 0.25));
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("final"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{}[model]\nwidnow = 8\n", grid_config(4, 0.25));
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn snr_val_defaults_to_midpoint() {
        let cfg = ExperimentConfig::from_toml_str(&grid_config(4, 0.25)).unwrap();
        assert_eq!(cfg.train.snr_val(), 7.0);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::from_toml_str(&grid_config(4, 0.25)).unwrap();
        let b = ExperimentConfig::from_toml_str(&grid_config(6, 0.25)).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn model_hash_ignores_schedule() {
        let a = ExperimentConfig::from_toml_str(&grid_config(4, 0.25)).unwrap();
        let mut b = a.clone();
        b.train.lr = 5e-4;
        b.seeds.init = 999;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn level_lookup_by_rho() {
        let cfg = ExperimentConfig::from_toml_str(&grid_config(6, 0.25)).unwrap();
        assert_eq!(cfg.grid.level_of(1.0 / 24.0), Some(1));
        assert_eq!(cfg.grid.level_of(5.0 / 24.0), Some(5));
        assert_eq!(cfg.grid.level_of(0.3), None);
    }
}
