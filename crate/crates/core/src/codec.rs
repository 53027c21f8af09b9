//! The adaptive-bandwidth codec: a Swin encoder/decoder pair conditioned on
//! `(snr_db, rho_l)`, plus the masking and zero-padding steps that turn one
//! full-rate codeword into any grid level's transmission.
//!
//! Encoding always produces the full-rate codeword matrix (`token_count`
//! tokens by `feature_dim` feature rows). [`mask_codeword`] keeps the
//! coordinates level `l` is allowed to transmit; the receiver zero-fills the
//! dropped coordinates with [`pad_received`] and decodes the full-size
//! matrix. Because the kept sets are nested across levels, the codec serves
//! the whole grid with one set of weights.
//!
//! Flattened codewords use token-outer, feature-inner order (the feature
//! index varies fastest), so a token's `(re, im)` feature pairs stay adjacent
//! and successive-refinement blocks are contiguous prefixes.

use candle_core::Tensor;
use candle_nn::{Conv2d, Conv2dConfig, Module};

use crate::channel::{normalize_power_blocks, ChannelSymbols};
use crate::config::{CodecScheme, DimensionTable, ExperimentConfig, GridMode};
use crate::error::{Error, Result};
use crate::nn::{Dense, Init, ParamStore, INIT_STD};
use crate::swin::{FeatureMap, PatchDivision, PatchEmbed, PatchMerging, SwinBlockPair};

/// Channel condition a codec invocation runs under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideInfo {
    pub snr_db: f64,
    /// 1-based grid level.
    pub level: usize,
    /// Bandwidth ratio of that level (always the exact grid value).
    pub rho: f64,
}

impl SideInfo {
    /// Build side info for a grid level, validating it against the config.
    pub fn new(cfg: &ExperimentConfig, level: usize, snr_db: f64) -> Result<Self> {
        if level == 0 || level > cfg.grid.levels {
            return Err(Error::Eval(format!(
                "level {level} is off the grid (valid levels: 1..={})",
                cfg.grid.levels
            )));
        }
        if snr_db < cfg.train.snr_min || snr_db > cfg.train.snr_max {
            log::warn!(
                "snr {snr_db} dB outside the training interval [{}, {}] dB",
                cfg.train.snr_min,
                cfg.train.snr_max
            );
        }
        Ok(SideInfo { snr_db, level, rho: cfg.grid.rho_at(level) })
    }
}

/// How codeword coordinates are selected for a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskScheme {
    /// First `n_f` feature rows of every token.
    Features,
    /// Every feature row of the first `n_t` tokens.
    Patches,
    /// First `2 * rho_1 * N * l` reals of the flattened codeword
    /// (successive refinement; blocks power-normalized independently).
    Refinement,
}

/// The scheme a config trains and evaluates under.
pub fn mask_scheme(cfg: &ExperimentConfig) -> MaskScheme {
    match cfg.scheme {
        CodecScheme::SuccessiveRefinement => MaskScheme::Refinement,
        CodecScheme::AdaptiveBandwidth => match cfg.grid.mode {
            GridMode::VaryingFeatures => MaskScheme::Features,
            GridMode::VaryingPatches => MaskScheme::Patches,
        },
    }
}

/// Full-rate codeword: `(batch, token_count, feature_dim)`. Also the shape
/// the receiver reconstructs by zero-padding.
#[derive(Debug, Clone)]
pub struct CodewordMatrix {
    data: Tensor,
}

impl CodewordMatrix {
    pub fn new(data: Tensor, dims: &DimensionTable) -> Result<Self> {
        let shape = data.dims();
        if shape.len() != 3 || shape[1] != dims.token_count || shape[2] != dims.feature_dim {
            return Err(Error::Shape(format!(
                "codeword must be (batch, {}, {}), got {shape:?}",
                dims.token_count, dims.feature_dim
            )));
        }
        Ok(CodewordMatrix { data })
    }

    /// `(batch, token_count, feature_dim)` layout.
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// Feature-major `(batch, feature_dim, token_count)` copy.
    pub fn to_feature_major(&self) -> Result<Tensor> {
        Ok(self.data.transpose(1, 2)?.contiguous()?)
    }

    pub fn batch(&self) -> usize {
        self.data.dims()[0]
    }
}

/// A masked, flattened codeword: `(batch, 2 * k_l)` reals for level `level`.
#[derive(Debug, Clone)]
pub struct MaskedCodeword {
    data: Tensor,
    level: usize,
}

impl MaskedCodeword {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn real_len(&self) -> usize {
        self.data.dims()[1]
    }
}

/// Keep the coordinates level `l` transmits and flatten them token-outer,
/// feature-inner. Implemented by slicing, so the dropped coordinates are not
/// part of the graph at all (their gradients are exactly zero).
pub fn mask_codeword(
    z: &CodewordMatrix,
    level: usize,
    scheme: MaskScheme,
    dims: &DimensionTable,
) -> Result<MaskedCodeword> {
    let lv = dims.level(level)?;
    let batch = z.batch();
    let data = match scheme {
        MaskScheme::Features => {
            let n_f = lv.kept_features.ok_or_else(|| {
                Error::Eval("grid has no per-level feature split".into())
            })?;
            z.tensor()
                .narrow(2, 0, n_f)?
                .reshape((batch, dims.token_count * n_f))?
        }
        MaskScheme::Patches => {
            let n_t = lv.kept_tokens.ok_or_else(|| {
                Error::Eval("grid has no per-level token split".into())
            })?;
            z.tensor()
                .narrow(1, 0, n_t)?
                .reshape((batch, n_t * dims.feature_dim))?
        }
        MaskScheme::Refinement => z
            .tensor()
            .reshape((batch, dims.token_count * dims.feature_dim))?
            .narrow(1, 0, lv.real_len)?,
    };
    debug_assert_eq!(data.dims()[1], lv.real_len);
    Ok(MaskedCodeword { data: data.contiguous()?, level })
}

/// Zero-fill the coordinates level `level` did not transmit, rebuilding the
/// full-rate matrix the decoder expects. Exact inverse of [`mask_codeword`]
/// on the kept coordinates.
pub fn pad_received(
    y: &Tensor,
    level: usize,
    scheme: MaskScheme,
    dims: &DimensionTable,
) -> Result<CodewordMatrix> {
    let lv = dims.level(level)?;
    let shape = y.dims();
    if shape.len() != 2 || shape[1] != lv.real_len {
        return Err(Error::Shape(format!(
            "received vector must be (batch, {}), got {shape:?}",
            lv.real_len
        )));
    }
    let batch = shape[0];
    let full = match scheme {
        MaskScheme::Features => {
            let n_f = lv.kept_features.expect("checked by mask_scheme");
            y.reshape((batch, dims.token_count, n_f))?
                .pad_with_zeros(2, 0, dims.feature_dim - n_f)?
        }
        MaskScheme::Patches => {
            let n_t = lv.kept_tokens.expect("checked by mask_scheme");
            y.reshape((batch, n_t, dims.feature_dim))?
                .pad_with_zeros(1, 0, dims.token_count - n_t)?
        }
        MaskScheme::Refinement => y
            .pad_with_zeros(1, 0, dims.token_count * dims.feature_dim - lv.real_len)?
            .reshape((batch, dims.token_count, dims.feature_dim))?,
    };
    CodewordMatrix::new(full, dims)
}

/// Apply the power constraint to a masked codeword: one global normalization
/// for the independent schemes, per-block for successive refinement (each
/// block of `2 rho_1 N` reals carries unit mean symbol power on its own).
pub fn normalize_masked(
    m: &MaskedCodeword,
    scheme: MaskScheme,
    dims: &DimensionTable,
) -> Result<ChannelSymbols> {
    let lv = dims.level(m.level())?;
    if m.real_len() != lv.real_len {
        return Err(Error::Shape(format!(
            "masked codeword carries {} reals but level {} transmits {}",
            m.real_len(),
            m.level(),
            lv.real_len
        )));
    }
    let blocks = match scheme {
        MaskScheme::Refinement => m.level(),
        _ => 1,
    };
    normalize_power_blocks(m.tensor(), blocks)
}

struct EncStage {
    merge: Option<PatchMerging>,
    pairs: Vec<SwinBlockPair>,
}

/// Init scale for the side-info embeddings. Their inputs are raw dB values
/// (single digits to tens), so the standard transformer init would hand the
/// constant side channels more energy than the image content carries at the
/// start of training; a smaller scale lets the optimizer grow them as
/// needed.
const SIDE_EMBED_STD: f64 = 2e-3;

/// Encoder: patch embedding, per-token side-info concatenation, merged Swin
/// stages, and a linear head to the codeword feature rows. The side
/// embedding rides along as `side_width` extra channels, so the first stage
/// runs at width `features + side_width` and the first merge projects back
/// down to `features`.
pub struct Encoder {
    embed: PatchEmbed,
    side: Dense,
    stages: Vec<EncStage>,
    head: Dense,
    side_takes_rho: bool,
}

impl Encoder {
    fn new(store: &mut ParamStore, cfg: &ExperimentConfig, dims: &DimensionTable) -> Result<Self> {
        let m = &cfg.model;
        let c = m.features;
        let n_u = m.side_width;
        // In refinement mode the codeword must not depend on the level, so
        // the encoder conditions on SNR alone.
        let side_takes_rho = cfg.scheme == CodecScheme::AdaptiveBandwidth;
        let side_in = if side_takes_rho { 2 } else { 1 };
        let embed = PatchEmbed::new(store, "enc.embed", m.image[0], m.patch, c)?;
        let side = Dense::with_std(store, "enc.side", side_in, n_u, SIDE_EMBED_STD)?;
        let mut stages = Vec::with_capacity(m.stages);
        for (i, &blocks) in m.blocks.iter().enumerate() {
            let width = if i == 0 { c + n_u } else { c };
            let merge = if i == 0 {
                None
            } else {
                let prev = if i == 1 { c + n_u } else { c };
                Some(PatchMerging::new(store, &format!("enc.s{i}.merge"), prev, c)?)
            };
            let pairs = (0..blocks / 2)
                .map(|p| {
                    SwinBlockPair::new(
                        store,
                        &format!("enc.s{i}.p{p}"),
                        width,
                        m.heads[i],
                        m.window,
                        m.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(EncStage { merge, pairs });
        }
        let head_in = if m.stages == 1 { c + n_u } else { c };
        let head = Dense::new(store, "enc.head", head_in, dims.feature_dim)?;
        Ok(Encoder { embed, side, stages, head, side_takes_rho })
    }

    fn side_values(&self, si: &SideInfo) -> Vec<f32> {
        if self.side_takes_rho {
            vec![si.snr_db as f32, si.rho as f32]
        } else {
            vec![si.snr_db as f32]
        }
    }

    fn forward(&self, images: &Tensor, si: &SideInfo, dims: &DimensionTable) -> Result<CodewordMatrix> {
        // Center pixels before embedding; [0,1] tokens all share a large
        // mid-grey component that would otherwise dominate every codeword at
        // initialization and starve the image-specific signal.
        let fm = self.embed.forward(&images.affine(2.0, -1.0)?)?;
        let u = Tensor::from_vec(
            self.side_values(si),
            (1, 1, 1, if self.side_takes_rho { 2 } else { 1 }),
            images.device(),
        )?;
        let u = self.side.forward(&u)?;
        let (b, h, w, _) = fm.tensor().dims4()?;
        let u = u.broadcast_as((b, h, w, u.dims()[3]))?.contiguous()?;
        let mut fm = FeatureMap::new(Tensor::cat(&[fm.tensor(), &u], 3)?, 0)?;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                fm = merge.forward(&fm)?;
            }
            for pair in &stage.pairs {
                fm = pair.forward(&fm)?;
            }
        }
        let z = self.head.forward(fm.tensor())?;
        CodewordMatrix::new(
            z.reshape((b, dims.token_count, dims.feature_dim))?,
            dims,
        )
    }
}

struct DecStage {
    pairs: Vec<SwinBlockPair>,
    divide: Option<PatchDivision>,
}

/// Decoder: mirrors the encoder in reverse — linear input projection off the
/// zero-padded codeword, Swin stages with patch division between them, a
/// patch-sized un-embedding, and a 3x3 conv to pixels.
pub struct Decoder {
    side: Dense,
    input: Dense,
    stages: Vec<DecStage>,
    unembed: Dense,
    patch: usize,
    out: Conv2d,
    image: [usize; 3],
}

impl Decoder {
    fn new(store: &mut ParamStore, cfg: &ExperimentConfig, dims: &DimensionTable) -> Result<Self> {
        let m = &cfg.model;
        let c = m.features;
        let side = Dense::with_std(store, "dec.side", 2, m.side_width, SIDE_EMBED_STD)?;
        let input = Dense::new(store, "dec.input", dims.feature_dim + m.side_width, c)?;
        let mut stages = Vec::with_capacity(m.stages);
        for j in 0..m.stages {
            // Mirrored depths: the deepest encoder stage comes first.
            let i = m.stages - 1 - j;
            let pairs = (0..m.blocks[i] / 2)
                .map(|p| {
                    SwinBlockPair::new(
                        store,
                        &format!("dec.s{j}.p{p}"),
                        c,
                        m.heads[i],
                        m.window,
                        m.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let divide = if j + 1 < m.stages {
                Some(PatchDivision::new(store, &format!("dec.s{j}.divide"), c)?)
            } else {
                None
            };
            stages.push(DecStage { pairs, divide });
        }
        // Un-embedding: expand each token to a patch x patch pixel block of
        // width c, then refine with a small conv.
        let unembed = Dense::new(store, "dec.unembed", c, c * m.patch * m.patch)?;
        let out_weight = store.take(
            "dec.out.weight",
            &[m.image[0], c, 3, 3],
            Init::TruncNormal { std: INIT_STD },
        )?;
        let out_bias = store.take("dec.out.bias", &[m.image[0]], Init::Zeros)?;
        let out = Conv2d::new(
            out_weight,
            Some(out_bias),
            Conv2dConfig { padding: 1, ..Default::default() },
        );
        Ok(Decoder { side, input, stages, unembed, patch: m.patch, out, image: m.image })
    }

    fn forward(&self, padded: &CodewordMatrix, si: &SideInfo, dims: &DimensionTable) -> Result<Tensor> {
        let b = padded.batch();
        let grid = padded
            .tensor()
            .reshape((b, dims.grid_h, dims.grid_w, dims.feature_dim))?;
        let u = Tensor::from_vec(
            vec![si.snr_db as f32, si.rho as f32],
            (1, 1, 1, 2),
            grid.device(),
        )?;
        let u = self.side.forward(&u)?;
        let u = u
            .broadcast_as((b, dims.grid_h, dims.grid_w, u.dims()[3]))?
            .contiguous()?;
        let x = self.input.forward(&Tensor::cat(&[&grid, &u], 3)?)?;
        let mut fm = FeatureMap::new(x, self.stages.len())?;
        for stage in &self.stages {
            for pair in &stage.pairs {
                fm = pair.forward(&fm)?;
            }
            if let Some(divide) = &stage.divide {
                fm = divide.forward(&fm)?;
            }
        }
        // Token grid back to pixel resolution.
        let expanded = self.unembed.forward(fm.tensor())?;
        let (b, h, w, _) = expanded.dims4()?;
        let p = self.patch;
        let c = expanded.dims()[3] / (p * p);
        let pixels = expanded
            .reshape((b, h, w, p, p, c))?
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b, h * p, w * p, c))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        // Raw pixels are parameterized around mid-grey so an untrained
        // decoder starts at the data's center rather than at black.
        let out = self.out.forward(&pixels)?.affine(1.0, 0.5)?;
        debug_assert_eq!(out.dims()[1..], [self.image[0], self.image[1], self.image[2]]);
        Ok(out)
    }
}

/// The full encoder/decoder pair plus its parameter store.
pub struct Codec {
    cfg: ExperimentConfig,
    dims: DimensionTable,
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl Codec {
    /// Build a freshly initialized codec (weights seeded from
    /// `cfg.seeds.init`).
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dims = cfg.dimensions()?;
        let mut store = ParamStore::new(cfg.seeds.init);
        let encoder = Encoder::new(&mut store, cfg, &dims)?;
        let decoder = Decoder::new(&mut store, cfg, &dims)?;
        log::info!(
            "codec with {} parameters ({} grid levels, scheme {})",
            store.param_count(),
            cfg.grid.levels,
            cfg.scheme
        );
        Ok(Codec { cfg: cfg.clone(), dims, store, encoder, decoder })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dims(&self) -> &DimensionTable {
        &self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn scheme(&self) -> MaskScheme {
        mask_scheme(&self.cfg)
    }

    /// Encode images (`(batch, c, H, W)`, [0, 1] scale) to the full-rate
    /// codeword.
    pub fn encode(&self, images: &Tensor, si: &SideInfo) -> Result<CodewordMatrix> {
        self.encoder.forward(images, si, &self.dims)
    }

    /// Decode a zero-padded codeword to images, unclamped (training path:
    /// gradients must not die at the pixel bounds).
    pub fn decode_raw(&self, padded: &CodewordMatrix, si: &SideInfo) -> Result<Tensor> {
        self.decoder.forward(padded, si, &self.dims)
    }

    /// Decode to valid images: [`Codec::decode_raw`] clamped to [0, 1].
    pub fn decode(&self, padded: &CodewordMatrix, si: &SideInfo) -> Result<Tensor> {
        Ok(self.decode_raw(padded, si)?.clamp(0f32, 1f32)?)
    }

    /// Run the whole chain at one grid point: encode, mask, normalize,
    /// AWGN, zero-pad, decode (clamped).
    pub fn run_point(
        &self,
        images: &Tensor,
        si: &SideInfo,
        noise: &mut crate::channel::NoiseModel,
    ) -> Result<Tensor> {
        let scheme = self.scheme();
        let z = self.encode(images, si)?;
        let masked = mask_codeword(&z, si.level, scheme, &self.dims)?;
        let sent = normalize_masked(&masked, scheme, &self.dims)?;
        let received = crate::channel::transmit_awgn(&sent, noise)?;
        let padded = pad_received(&received, si.level, scheme, &self.dims)?;
        self.decode(&padded, si)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::NoiseModel;
    use candle_core::{Device, Var};
    use proptest::prelude::*;

    /// Desk-scale config shared by tests across the crate.
    pub(crate) fn toy_config(scheme: &str, mode: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            "scheme = \"{scheme}\"\n\
             [grid]\nlevels = 4\nrho_max = 0.25\nmode = \"{mode}\"\n\
             [model]\nfeatures = 32\nblocks = [2, 2]\nheads = [4, 4]\nside_width = 4\n\
             [data]\nsource = \"synthetic\"\ntrain = 4\nval = 2\ntest = 2\n"
        ))
        .unwrap()
    }

    pub(crate) fn random_images(batch: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..batch * 3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(v, (batch, 3, 32, 32), &Device::Cpu).unwrap()
    }

    fn arange_codeword(dims: &DimensionTable) -> CodewordMatrix {
        let n = dims.token_count * dims.feature_dim;
        // Values start at 1 so "exactly zero" can only mean "masked out".
        let v: Vec<f32> = (1..=n).map(|i| i as f32).collect();
        CodewordMatrix::new(
            Tensor::from_vec(v, (1, dims.token_count, dims.feature_dim), &Device::Cpu).unwrap(),
            dims,
        )
        .unwrap()
    }

    #[test]
    fn encode_decode_shapes() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let codec = Codec::new(&cfg).unwrap();
        let si = SideInfo::new(&cfg, 2, 7.0).unwrap();
        let z = codec.encode(&random_images(2, 1), &si).unwrap();
        assert_eq!(z.tensor().dims(), &[2, 64, 24]);
        assert_eq!(z.to_feature_major().unwrap().dims(), &[2, 24, 64]);
        let back = codec.decode(&z, &si).unwrap();
        assert_eq!(back.dims(), &[2, 3, 32, 32]);
    }

    #[test]
    fn decode_is_clamped_decode_raw() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let codec = Codec::new(&cfg).unwrap();
        let si = SideInfo::new(&cfg, 4, 7.0).unwrap();
        let z = codec.encode(&random_images(1, 2), &si).unwrap();
        let raw = codec.decode_raw(&z, &si).unwrap();
        let clamped = codec.decode(&z, &si).unwrap();
        let a = raw.clamp(0f32, 1f32).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = clamped.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mask_lengths_follow_the_grid() {
        for (scheme, mode, want) in [
            ("adaptive-bandwidth", "varying-features", MaskScheme::Features),
            ("adaptive-bandwidth", "varying-patches", MaskScheme::Patches),
            ("successive-refinement", "varying-features", MaskScheme::Refinement),
        ] {
            let cfg = toy_config(scheme, mode);
            assert_eq!(mask_scheme(&cfg), want);
            let dims = cfg.dimensions().unwrap();
            let z = arange_codeword(&dims);
            for l in 1..=4 {
                let m = mask_codeword(&z, l, want, &dims).unwrap();
                assert_eq!(m.real_len(), dims.level(l).unwrap().real_len);
                assert_eq!(m.level(), l);
            }
            assert!(mask_codeword(&z, 5, want, &dims).is_err());
            assert!(mask_codeword(&z, 0, want, &dims).is_err());
        }
    }

    #[test]
    fn mask_keeps_the_prescribed_coordinates() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let dims = cfg.dimensions().unwrap();
        let z = arange_codeword(&dims);
        let zv = z.tensor().to_vec3::<f32>().unwrap();

        // Varying features, level 1: first n_f features of every token,
        // token-outer flattening.
        let n_f = dims.level(1).unwrap().kept_features.unwrap();
        let m = mask_codeword(&z, 1, MaskScheme::Features, &dims).unwrap();
        let mv = m.tensor().to_vec2::<f32>().unwrap().remove(0);
        for t in 0..dims.token_count {
            for f in 0..n_f {
                assert_eq!(mv[t * n_f + f], zv[0][t][f]);
            }
        }

        // Varying patches, level 1: all features of the first n_t tokens.
        let n_t = dims.level(1).unwrap().real_len / dims.feature_dim;
        let m = mask_codeword(&z, 1, MaskScheme::Patches, &dims).unwrap();
        let mv = m.tensor().to_vec2::<f32>().unwrap().remove(0);
        for t in 0..n_t {
            for f in 0..dims.feature_dim {
                assert_eq!(mv[t * dims.feature_dim + f], zv[0][t][f]);
            }
        }

        // Refinement, level 1: literal prefix of the flattened codeword.
        let m = mask_codeword(&z, 1, MaskScheme::Refinement, &dims).unwrap();
        let mv = m.tensor().to_vec2::<f32>().unwrap().remove(0);
        for (i, &v) in mv.iter().enumerate() {
            assert_eq!(v, (i + 1) as f32);
        }
    }

    #[test]
    fn full_rate_mask_pad_round_trip_is_bit_exact() {
        for scheme in [MaskScheme::Features, MaskScheme::Patches, MaskScheme::Refinement] {
            let cfg = toy_config("adaptive-bandwidth", "varying-features");
            let dims = cfg.dimensions().unwrap();
            let z = arange_codeword(&dims);
            let l = dims.levels.len();
            let m = mask_codeword(&z, l, scheme, &dims).unwrap();
            let back = pad_received(m.tensor(), l, scheme, &dims).unwrap();
            let a = z.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = back.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "{scheme:?}");
        }
    }

    #[test]
    fn padded_coordinates_are_exact_zeros_and_rest_survives() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let dims = cfg.dimensions().unwrap();
        let z = arange_codeword(&dims);
        for scheme in [MaskScheme::Features, MaskScheme::Patches, MaskScheme::Refinement] {
            for l in 1..dims.levels.len() {
                let m = mask_codeword(&z, l, scheme, &dims).unwrap();
                let padded = pad_received(m.tensor(), l, scheme, &dims).unwrap();
                let pv = padded.tensor().to_vec3::<f32>().unwrap();
                let zv = z.tensor().to_vec3::<f32>().unwrap();
                let kept = kept_coords(scheme, &dims, l);
                for t in 0..dims.token_count {
                    for f in 0..dims.feature_dim {
                        if kept[t * dims.feature_dim + f] {
                            assert_eq!(pv[0][t][f], zv[0][t][f]);
                        } else {
                            assert_eq!(pv[0][t][f].to_bits(), 0f32.to_bits());
                        }
                    }
                }
            }
        }
    }

    /// Oracle: which (token, feature) coordinates survive masking, computed
    /// straight from the definitions rather than via tensor slicing.
    fn kept_coords(scheme: MaskScheme, dims: &DimensionTable, l: usize) -> Vec<bool> {
        let lv = dims.level(l).unwrap();
        let mut kept = vec![false; dims.token_count * dims.feature_dim];
        for t in 0..dims.token_count {
            for f in 0..dims.feature_dim {
                let flat = t * dims.feature_dim + f;
                kept[flat] = match scheme {
                    MaskScheme::Features => f < lv.kept_features.unwrap(),
                    MaskScheme::Patches => t < lv.real_len / dims.feature_dim,
                    MaskScheme::Refinement => flat < lv.real_len,
                };
            }
        }
        kept
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn kept_sets_are_nested_across_levels(seed in 0u64..1000) {
            let cfg = toy_config("adaptive-bandwidth", "varying-features");
            let dims = cfg.dimensions().unwrap();
            let _ = seed;
            for scheme in [MaskScheme::Features, MaskScheme::Patches, MaskScheme::Refinement] {
                for l in 1..dims.levels.len() {
                    let small = kept_coords(scheme, &dims, l);
                    let big = kept_coords(scheme, &dims, l + 1);
                    for (i, (&s, &b)) in small.iter().zip(&big).enumerate() {
                        prop_assert!(!s || b, "{scheme:?}: coordinate {i} kept at {l} but not {}", l + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_codewords_are_nested_prefixes() {
        let cfg = toy_config("successive-refinement", "varying-features");
        let codec = Codec::new(&cfg).unwrap();
        let images = random_images(1, 5);
        let si1 = SideInfo::new(&cfg, 1, 7.0).unwrap();
        let si3 = SideInfo::new(&cfg, 3, 7.0).unwrap();
        // The encoder may not condition on the level in refinement mode...
        let z1 = codec.encode(&images, &si1).unwrap();
        let z3 = codec.encode(&images, &si3).unwrap();
        let a = z1.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = z3.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        // ...so masked level-l codewords are bitwise prefixes of level-(l+1).
        let scheme = codec.scheme();
        let m1 = mask_codeword(&z1, 1, scheme, codec.dims()).unwrap();
        let m3 = mask_codeword(&z3, 3, scheme, codec.dims()).unwrap();
        let v1 = m1.tensor().to_vec2::<f32>().unwrap().remove(0);
        let v3 = m3.tensor().to_vec2::<f32>().unwrap().remove(0);
        assert_eq!(v1[..], v3[..v1.len()]);
        // And per-block normalization gives every block unit power.
        let sent = normalize_masked(&m3, scheme, codec.dims()).unwrap();
        let row = sent.tensor().to_vec2::<f32>().unwrap().remove(0);
        let block = codec.dims().block_reals;
        for chunk in row.chunks(block) {
            let p = chunk.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()
                / (block as f64 / 2.0);
            assert!((p - 1.0).abs() < 1e-6, "block power {p}");
        }
    }

    #[test]
    fn adaptive_codeword_depends_on_level() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let codec = Codec::new(&cfg).unwrap();
        let images = random_images(1, 6);
        let z1 = codec
            .encode(&images, &SideInfo::new(&cfg, 1, 7.0).unwrap())
            .unwrap();
        let z4 = codec
            .encode(&images, &SideInfo::new(&cfg, 4, 7.0).unwrap())
            .unwrap();
        let a = z1.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = z4.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn masked_out_coordinates_get_exactly_zero_gradient() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let codec = Codec::new(&cfg).unwrap();
        let dims = codec.dims().clone();
        let si = SideInfo::new(&cfg, 1, 7.0).unwrap();
        let var = Var::from_tensor(arange_codeword(&dims).tensor()).unwrap();
        let z = CodewordMatrix::new(var.as_tensor().clone(), &dims).unwrap();
        let masked = mask_codeword(&z, 1, MaskScheme::Features, &dims).unwrap();
        let padded = pad_received(masked.tensor(), 1, MaskScheme::Features, &dims).unwrap();
        let recon = codec.decode_raw(&padded, &si).unwrap();
        let target = random_images(1, 9);
        let loss = crate::metrics::mse_loss(&recon, &target).unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(&var).expect("grad reaches the codeword");
        let gv = g.to_vec3::<f32>().unwrap();
        let kept = kept_coords(MaskScheme::Features, &dims, 1);
        let mut nonzero_kept = 0usize;
        for t in 0..dims.token_count {
            for f in 0..dims.feature_dim {
                if kept[t * dims.feature_dim + f] {
                    if gv[0][t][f] != 0.0 {
                        nonzero_kept += 1;
                    }
                } else {
                    assert_eq!(
                        gv[0][t][f].to_bits(),
                        0f32.to_bits(),
                        "masked coordinate ({t}, {f}) received gradient"
                    );
                }
            }
        }
        assert!(nonzero_kept > 0, "kept coordinates should receive gradient");
    }

    #[test]
    fn full_chain_runs_and_is_deterministic() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let images = random_images(2, 12);
        let run = || {
            let codec = Codec::new(&cfg).unwrap();
            let si = SideInfo::new(&cfg, 2, 7.0).unwrap();
            let mut noise = NoiseModel::new(si.snr_db, 77);
            codec
                .run_point(&images, &si, &mut noise)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn side_info_validates_levels() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        assert!(SideInfo::new(&cfg, 0, 7.0).is_err());
        assert!(SideInfo::new(&cfg, 5, 7.0).is_err());
        let si = SideInfo::new(&cfg, 2, 7.0).unwrap();
        assert_eq!(si.rho, 0.125);
    }
}
