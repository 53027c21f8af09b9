//! Dynamic weight assignment (DWA).
//!
//! When one model serves every bandwidth level, the levels compete: left
//! alone, training favours whichever level dominates the summed loss. DWA
//! rebalances them each epoch from validation feedback. For level `l` with
//! validation PSNR `p_l` and a per-level upper bound `p*_l` (the PSNR of a
//! non-adaptive model trained for that level alone), the gap
//! `delta_l = p*_l - p_l` sets the next epoch's loss weight
//!
//! ```text
//! w_l = clip(2^(alpha * (delta_l - beta)) - 1, 0, gamma)
//! ```
//!
//! so levels far behind their bound get exponentially more weight, levels
//! within `beta` dB of it drop out of the loss, and `gamma` caps runaway
//! weights. All weights start at 1.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// The clipped-exponential weight rule. `delta_db` is the PSNR gap to the
/// upper bound in dB; larger gaps yield larger weights.
pub fn dwa_weight(delta_db: f64, alpha: f64, beta: f64, gamma: f64) -> f64 {
    let raw = 2f64.powf(alpha * (delta_db - beta)) - 1.0;
    raw.clamp(0.0, gamma)
}

/// Weight-rule parameters, normally taken from the training config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightPolicy {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl WeightPolicy {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        WeightPolicy { alpha: cfg.alpha, beta: cfg.beta, gamma: cfg.gamma }
    }

    pub fn weight(&self, delta_db: f64) -> f64 {
        dwa_weight(delta_db, self.alpha, self.beta, self.gamma)
    }
}

/// Per-level loss weights, updated once per epoch after validation.
#[derive(Debug, Clone)]
pub struct DwaState {
    policy: WeightPolicy,
    weights: Vec<f64>,
}

impl DwaState {
    /// All levels start at weight 1.
    pub fn new(policy: WeightPolicy, levels: usize) -> Self {
        DwaState { policy, weights: vec![1.0; levels] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight for 1-based level `l`.
    pub fn weight(&self, l: usize) -> f64 {
        self.weights[l - 1]
    }

    /// Recompute all weights from this epoch's PSNR gaps (dB, one per level).
    pub fn update(&mut self, deltas_db: &[f64]) -> Result<()> {
        if deltas_db.len() != self.weights.len() {
            return Err(Error::Train(format!(
                "got {} PSNR gaps for {} levels",
                deltas_db.len(),
                self.weights.len()
            )));
        }
        for (w, &d) in self.weights.iter_mut().zip(deltas_db) {
            *w = self.policy.weight(d);
        }
        Ok(())
    }
}

/// Where an upper-bound value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Trained in this workspace by `train-bounds`.
    Trained,
    /// Supplied externally (e.g. published numbers).
    External,
}

/// One upper-bound record: the PSNR a non-adaptive model reaches at
/// `(level, snr_db)` for a given architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundEntry {
    pub level: usize,
    pub rho: f64,
    pub snr_db: f64,
    pub psnr_db: f64,
    pub provenance: Provenance,
    /// Architecture identity ([`crate::config::ExperimentConfig::model_hash`]);
    /// bounds only apply to the architecture they were measured on.
    pub model_hash: String,
}

/// SNR match tolerance for registry lookups (dB).
const SNR_TOL: f64 = 1e-9;

/// Registry of upper bounds keyed by `(level, snr_db, model_hash)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpperBoundRegistry {
    entries: Vec<BoundEntry>,
}

impl UpperBoundRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[BoundEntry] {
        &self.entries
    }

    /// Insert or replace the entry with the same key.
    pub fn insert(&mut self, entry: BoundEntry) {
        self.entries.retain(|e| {
            !(e.level == entry.level
                && (e.snr_db - entry.snr_db).abs() <= SNR_TOL
                && e.model_hash == entry.model_hash)
        });
        self.entries.push(entry);
        self.entries.sort_by(|a, b| {
            (a.level, a.snr_db)
                .partial_cmp(&(b.level, b.snr_db))
                .expect("finite snr")
        });
    }

    pub fn lookup(&self, level: usize, snr_db: f64, model_hash: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.level == level
                    && (e.snr_db - snr_db).abs() <= SNR_TOL
                    && e.model_hash == model_hash
            })
            .map(|e| e.psnr_db)
    }

    /// Upper bounds for levels `1..=levels` at `snr_db`, or an error naming
    /// the first missing level. Called before DWA training starts.
    pub fn bounds_for(
        &self,
        levels: usize,
        snr_db: f64,
        model_hash: &str,
    ) -> Result<Vec<f64>> {
        (1..=levels)
            .map(|l| {
                self.lookup(l, snr_db, model_hash).ok_or_else(|| {
                    Error::Train(format!(
                        "upper-bound registry has no entry for level {l} at \
                         {snr_db} dB (model {model_hash}); run `train-bounds` \
                         first or supply external bounds"
                    ))
                })
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Train(format!(
                "cannot read upper-bound registry {}: {e}",
                path.as_ref().display()
            ))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Draw a uniform SNR from `[snr_min, snr_max]` dB (degenerate intervals
/// yield the endpoint).
pub fn sample_snr<R: Rng>(rng: &mut R, snr_min: f64, snr_max: f64) -> f64 {
    if snr_max > snr_min { rng.gen_range(snr_min..snr_max) } else { snr_min }
}

/// Draw the channel condition for one training batch: a uniform grid level
/// and a uniform SNR from `[snr_min, snr_max]` dB.
pub fn sample_condition<R: Rng>(
    rng: &mut R,
    levels: usize,
    snr_min: f64,
    snr_max: f64,
) -> (usize, f64) {
    let l = rng.gen_range(1..=levels);
    (l, sample_snr(rng, snr_min, snr_max))
}
