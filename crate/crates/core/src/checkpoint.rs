//! Run directories and checkpoint persistence.
//!
//! A training run owns a directory laid out as:
//!
//! ```text
//! <run>/
//!   config.toml          exact experiment config the run was built from
//!   best.safetensors     weights of the best validation epoch
//!   best.json            metadata for those weights
//!   train_log.jsonl      one JSON record per epoch
//!   registry.json        upper-bound registry (bound runs / DWA runs)
//!   epoch_NNNNN.safetensors  optional periodic snapshots
//! ```
//!
//! Weights travel as safetensors keyed by parameter name; metadata carries
//! the config hash so a checkpoint can never be silently applied to a model
//! built from a different config.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Metadata stored beside each weight file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Hash of the full experiment config the run used.
    pub config_hash: String,
    /// Hash of the architecture-defining part (scheme + grid + model).
    pub model_hash: String,
    /// What was trained: `adaptive`, `adaptive-no-dwa`, or `bound-l<l>`.
    pub label: String,
    /// 1-based epoch the weights come from.
    pub epoch: usize,
    /// Mean validation MSE (network scale) at that epoch.
    pub val_mse: f64,
    /// Per-level validation PSNR (dB) at that epoch.
    pub val_psnr_db: Vec<f64>,
}

/// Write weights as a safetensors file.
pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let snap = store.snapshot()?;
    let map: HashMap<String, candle_core::Tensor> = snap.into_iter().collect();
    candle_core::safetensors::save(&map, path)?;
    Ok(())
}

/// Load weights into an existing store; names and shapes must match exactly.
pub fn load_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let map = candle_core::safetensors::load(path, &Device::Cpu)?;
    store.restore(&map.into_iter().collect())
}

/// Save weights plus metadata under `dir/<stem>.safetensors` / `<stem>.json`.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    store: &ParamStore,
    meta: &CheckpointMeta,
) -> Result<()> {
    save_weights(store, &dir.join(format!("{stem}.safetensors")))?;
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Create a run directory and record the config it was built from.
pub fn init_run_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    Ok(())
}

/// Conventional run directory under `root`: first 12 hex chars of the config
/// hash, plus a label.
pub fn run_dir(root: &Path, cfg: &ExperimentConfig, label: &str) -> Result<PathBuf> {
    Ok(root.join(format!("{}-{label}", &cfg.config_hash()[..12])))
}

/// Rebuild the codec a run directory describes and load its best weights.
///
/// Refuses to load if the metadata's config hash does not match the config
/// stored in the directory — a mismatch means the directory was assembled
/// from parts of different runs.
pub fn load_codec(dir: &Path) -> Result<(Codec, CheckpointMeta)> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let meta = load_meta(&dir.join("best.json"))?;
    let hash = cfg.config_hash();
    if meta.config_hash != hash {
        return Err(Error::Checkpoint(format!(
            "checkpoint config hash {} does not match {}'s config.toml ({hash})",
            meta.config_hash,
            dir.display()
        )));
    }
    let codec = Codec::new(&cfg)?;
    load_weights(codec.store(), &dir.join("best.safetensors"))?;
    Ok((codec, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ExperimentConfig {
        crate::codec::tests::toy_config("adaptive-bandwidth", "varying-features")
    }

    fn meta_for(cfg: &ExperimentConfig) -> CheckpointMeta {
        CheckpointMeta {
            config_hash: cfg.config_hash(),
            model_hash: cfg.model_hash(),
            label: "adaptive".into(),
            epoch: 3,
            val_mse: 0.01,
            val_psnr_db: vec![20.0, 21.0, 22.0, 23.0],
        }
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let cfg = toy_config();
        let codec = Codec::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        init_run_dir(dir.path(), &cfg).unwrap();
        save_checkpoint(dir.path(), "best", codec.store(), &meta_for(&cfg)).unwrap();

        // A fresh codec from a different init seed converges to the saved
        // weights exactly.
        let mut other_cfg = cfg.clone();
        other_cfg.seeds.init = 999;
        let other = Codec::new(&other_cfg).unwrap();
        let before = other.store().snapshot().unwrap();
        load_weights(other.store(), &dir.path().join("best.safetensors")).unwrap();
        let after = other.store().snapshot().unwrap();
        let reference = codec.store().snapshot().unwrap();
        let mut changed = false;
        for (name, t) in &reference {
            let a = after[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let r = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, r, "parameter {name} not restored exactly");
            let b = before[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            changed |= a != b;
        }
        assert!(changed, "loading should actually overwrite weights");
    }

    #[test]
    fn load_codec_checks_config_hash() {
        let cfg = toy_config();
        let codec = Codec::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        init_run_dir(dir.path(), &cfg).unwrap();
        save_checkpoint(dir.path(), "best", codec.store(), &meta_for(&cfg)).unwrap();

        let (loaded, meta) = load_codec(dir.path()).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(loaded.store().param_count(), codec.store().param_count());

        // Tamper with the stored config: the hash check must refuse.
        let mut other = cfg.clone();
        other.train.lr = 0.5;
        std::fs::write(dir.path().join("config.toml"), other.to_toml_string()).unwrap();
        let err = match load_codec(dir.path()) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("tampered config must be refused"),
        };
        assert!(err.contains("does not match"), "{err}");
    }

    #[test]
    fn restore_rejects_missing_and_extra_parameters() {
        let cfg = toy_config();
        let codec = Codec::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        save_weights(codec.store(), &path).unwrap();

        // A store with a different architecture cannot absorb these weights.
        let mut small = cfg.clone();
        small.model.features = 16;
        small.model.heads = vec![4, 4];
        let other = Codec::new(&small).unwrap();
        assert!(load_weights(other.store(), &path).is_err());
    }
}
