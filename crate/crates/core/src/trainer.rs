//! Training loops.
//!
//! [`Trainer`] drives two kinds of runs over the same architecture:
//!
//! * **Adaptive** — every batch draws a random grid level and SNR, so one
//!   model learns to serve the whole bandwidth/SNR grid. With dynamic
//!   weighting enabled, each level's loss is scaled by a weight recomputed
//!   every epoch from the gap between that level's validation PSNR and its
//!   single-level upper bound.
//! * **Single level** — the bandwidth level is pinned and only the SNR
//!   varies. These runs produce the per-level upper bounds the adaptive
//!   weighting consumes; [`train_upper_bounds`] runs one per grid level and
//!   collects the results into an [`UpperBoundRegistry`].
//!
//! Loss is mean squared error on the *unclamped* decoder output (clamping
//! would zero gradients at the pixel bounds); validation PSNR uses the
//! clamped output, i.e. exactly what evaluation reports. Optimization is
//! Adam (AdamW with zero weight decay), with multiplicative LR decay on
//! validation plateau and mode-specific early-stopping patience.
//!
//! Every epoch appends one JSON record to `train_log.jsonl` in the run
//! directory. Records carry no timestamps, so identical configs and seeds
//! produce byte-identical logs.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_awgn, NoiseModel};
use crate::checkpoint::{init_run_dir, save_checkpoint, save_weights, CheckpointMeta};
use crate::codec::{mask_codeword, normalize_masked, pad_received, Codec, SideInfo};
use crate::config::ExperimentConfig;
use crate::data::{shuffled_indices, DataBundle};
use crate::dwa::{
    sample_condition, sample_snr, BoundEntry, DwaState, Provenance, UpperBoundRegistry,
    WeightPolicy,
};
use crate::error::{Error, Result};
use crate::metrics::{batch_psnr, mse_loss, PsnrResult};
use crate::nn::derive_seed;

/// What a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// All grid levels, optionally with dynamic loss weighting.
    Adaptive { dwa: bool },
    /// One pinned grid level (upper-bound model).
    SingleLevel { level: usize },
}

impl TrainMode {
    fn label(&self) -> String {
        match self {
            TrainMode::Adaptive { dwa: true } => "adaptive".into(),
            TrainMode::Adaptive { dwa: false } => "adaptive-no-dwa".into(),
            TrainMode::SingleLevel { level } => format!("bound-l{level}"),
        }
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Learning rate used this epoch.
    pub lr: f64,
    /// Per-level loss weights used this epoch (aligned with `val_levels`).
    pub weights: Vec<f64>,
    /// Mean weighted training loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean unweighted training MSE ([0, 1] pixel scale).
    pub train_mse: f64,
    /// How many batches each level drew this epoch.
    pub level_batches: Vec<usize>,
    /// Grid levels validated each epoch.
    pub val_levels: Vec<usize>,
    /// Validation PSNR (dB) per entry of `val_levels`.
    pub val_psnr_db: Vec<f64>,
    /// Mean validation MSE across levels (255 pixel scale); the plateau and
    /// early-stop metric.
    pub val_mse: f64,
    /// Upper-bound PSNR gaps (dB) driving the weight update; empty when
    /// dynamic weighting is off.
    pub deltas_db: Vec<f64>,
    /// Weights the next epoch will use.
    pub next_weights: Vec<f64>,
    /// Whether this epoch improved the best validation MSE.
    pub improved: bool,
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub label: String,
    pub run_dir: PathBuf,
    pub best_epoch: usize,
    /// Best mean validation MSE (255 pixel scale).
    pub best_val_mse: f64,
    /// Validation PSNR per validated level at the best epoch.
    pub best_val_psnr_db: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub log: Vec<EpochRecord>,
}

/// Loss values from one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Weighted loss actually backpropagated.
    pub loss: f64,
    /// Unweighted MSE of the same batch.
    pub mse: f64,
}

/// Plateau bookkeeping: when to decay the LR and when to stop.
///
/// `observe` feeds one epoch's validation metric and reports whether it
/// improved the best seen, whether the LR should decay now (stall hit
/// `lr_patience`; the stall counter then restarts), and whether training
/// should stop (stall hit `stop_patience`).
#[derive(Debug, Clone)]
pub struct ProgressTracker {
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    since_improvement: usize,
    since_decay: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub improved: bool,
    pub decay_lr: bool,
    pub stop: bool,
}

impl ProgressTracker {
    pub fn new(lr_patience: usize, stop_patience: usize) -> Self {
        ProgressTracker {
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            since_improvement: 0,
            since_decay: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val: f64) -> Progress {
        let improved = val < self.best;
        if improved {
            self.best = val;
            self.since_improvement = 0;
            self.since_decay = 0;
            return Progress { improved, decay_lr: false, stop: false };
        }
        self.since_improvement += 1;
        self.since_decay += 1;
        let decay_lr = self.lr_patience > 0 && self.since_decay >= self.lr_patience;
        if decay_lr {
            self.since_decay = 0;
        }
        let stop = self.stop_patience > 0 && self.since_improvement >= self.stop_patience;
        Progress { improved, decay_lr, stop }
    }
}

/// One training run: owns the model, optimizer, and weighting state.
pub struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a DataBundle,
    mode: TrainMode,
    codec: Codec,
    opt: AdamW,
    dwa: Option<DwaState>,
    /// Upper-bound PSNR per level (present iff dynamic weighting is on).
    bounds: Vec<f64>,
    val_levels: Vec<usize>,
    sampler: ChaCha12Rng,
}

impl<'a> Trainer<'a> {
    /// Build a run. Dynamic weighting requires a registry holding an upper
    /// bound for every grid level at the validation SNR.
    pub fn new(
        cfg: &'a ExperimentConfig,
        data: &'a DataBundle,
        mode: TrainMode,
        registry: Option<&UpperBoundRegistry>,
    ) -> Result<Self> {
        let levels = cfg.grid.levels;
        if let TrainMode::SingleLevel { level } = mode {
            if level == 0 || level > levels {
                return Err(Error::Train(format!(
                    "single-level mode asks for level {level} of a {levels}-level grid"
                )));
            }
        }
        let codec = Codec::new(cfg)?;
        let opt = AdamW::new(
            codec.store().vars(),
            ParamsAdamW {
                lr: cfg.train.lr,
                weight_decay: 0.0, // plain Adam
                ..ParamsAdamW::default()
            },
        )?;
        let (dwa, bounds) = match mode {
            TrainMode::Adaptive { dwa: true } => {
                let registry = registry.ok_or_else(|| {
                    Error::Train(
                        "dynamic weighting needs an upper-bound registry; \
                         run `train-bounds` first"
                            .into(),
                    )
                })?;
                let bounds = registry.bounds_for(
                    levels,
                    cfg.train.snr_val(),
                    &cfg.model_hash(),
                )?;
                (Some(DwaState::new(WeightPolicy::from_train(&cfg.train), levels)), bounds)
            }
            _ => (None, Vec::new()),
        };
        let val_levels = match mode {
            TrainMode::Adaptive { .. } => (1..=levels).collect(),
            TrainMode::SingleLevel { level } => vec![level],
        };
        Ok(Trainer {
            cfg,
            data,
            mode,
            codec,
            opt,
            dwa,
            bounds,
            val_levels,
            sampler: ChaCha12Rng::seed_from_u64(derive_seed(
                cfg.seeds.sampling,
                &mode.label(),
            )),
        })
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    /// Loss weights in effect right now, one per grid level.
    pub fn weights(&self) -> Vec<f64> {
        match &self.dwa {
            Some(state) => state.weights().to_vec(),
            None => vec![1.0; self.cfg.grid.levels],
        }
    }

    /// One optimization step: full chain on the unclamped decoder output,
    /// loss scaled by `weight`, Adam update.
    pub fn step_batch(
        &mut self,
        images: &Tensor,
        si: &SideInfo,
        weight: f64,
        noise: &mut NoiseModel,
    ) -> Result<StepStats> {
        let scheme = self.codec.scheme();
        let dims = self.codec.dims();
        let z = self.codec.encode(images, si)?;
        let masked = mask_codeword(&z, si.level, scheme, dims)?;
        let sent = normalize_masked(&masked, scheme, dims)?;
        let received = transmit_awgn(&sent, noise)?;
        let padded = pad_received(&received, si.level, scheme, dims)?;
        let recon = self.codec.decode_raw(&padded, si)?;
        let mse = mse_loss(&recon, images)?;
        let loss = mse.affine(weight, 0.0)?;
        let stats = StepStats {
            loss: loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?,
            mse: mse.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?,
        };
        if !stats.loss.is_finite() {
            return Err(Error::Train(format!(
                "non-finite loss {} (level {}, {:.2} dB)",
                stats.loss, si.level, si.snr_db
            )));
        }
        let grads = loss.backward()?;
        self.opt.step(&grads)?;
        Ok(stats)
    }

    /// Validation pass at the validation SNR: per-level PSNR over the whole
    /// validation set, plus the mean per-level MSE (255 pixel scale) used as
    /// the plateau metric. Noise is drawn from a per-epoch, per-level seed
    /// so reruns are identical.
    pub fn validate(&self, epoch: usize) -> Result<(Vec<f64>, f64)> {
        let snr = self.cfg.train.snr_val();
        let batch = self.cfg.train.batch;
        let n = self.data.val.len();
        let mut psnrs = Vec::with_capacity(self.val_levels.len());
        let mut mse_sum = 0.0;
        for &level in &self.val_levels {
            let si = SideInfo::new(self.cfg, level, snr)?;
            let mut noise = NoiseModel::new(
                snr,
                derive_seed(self.cfg.seeds.channel, &format!("val-e{epoch}-l{level}")),
            );
            let mut results: Vec<PsnrResult> = Vec::with_capacity(n);
            let mut start = 0;
            while start < n {
                let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
                let images = self.data.val.batch(&idx)?;
                let recon = self.codec.run_point(&images, &si, &mut noise)?;
                results.extend(batch_psnr(&recon, &images)?);
                start += batch;
            }
            let mse = results.iter().map(|r| r.mse).sum::<f64>() / results.len() as f64;
            psnrs.push(crate::metrics::mean_psnr(&results));
            mse_sum += mse;
        }
        Ok((psnrs, mse_sum / self.val_levels.len() as f64))
    }

    /// Run the full loop, writing checkpoints and the epoch log to `dir`.
    pub fn run(&mut self, dir: &Path) -> Result<TrainOutcome> {
        init_run_dir(dir, self.cfg)?;
        let mut log_file = std::fs::File::create(dir.join("train_log.jsonl"))?;
        let train_cfg = &self.cfg.train;
        let stop_patience = match self.mode {
            TrainMode::Adaptive { .. } => train_cfg.patience_adaptive,
            TrainMode::SingleLevel { .. } => train_cfg.patience_nonadaptive,
        };
        let mut tracker = ProgressTracker::new(train_cfg.lr_patience, stop_patience);
        let mut lr = train_cfg.lr;
        let levels = self.cfg.grid.levels;
        let n_train = self.data.train.len();
        if n_train == 0 || self.data.val.is_empty() {
            return Err(Error::Train("empty training or validation set".into()));
        }
        let mut log = Vec::new();
        let mut best_epoch = 0;
        let mut best_psnr = Vec::new();
        let mut stopped_early = false;

        for epoch in 1..=train_cfg.max_epochs {
            let order = shuffled_indices(
                n_train,
                derive_seed(self.cfg.seeds.data, &format!("shuffle-e{epoch}")),
            );
            let mut noise_seedling = derive_seed(
                self.cfg.seeds.channel,
                &format!("train-e{epoch}"),
            );
            let weights = self.weights();
            let mut loss_sum = 0.0;
            let mut mse_sum = 0.0;
            let mut level_batches = vec![0usize; levels];
            let mut batches = 0usize;
            for chunk in order.chunks(train_cfg.batch) {
                let (level, snr) = match self.mode {
                    TrainMode::Adaptive { .. } => sample_condition(
                        &mut self.sampler,
                        levels,
                        train_cfg.snr_min,
                        train_cfg.snr_max,
                    ),
                    TrainMode::SingleLevel { level } => (
                        level,
                        sample_snr(&mut self.sampler, train_cfg.snr_min, train_cfg.snr_max),
                    ),
                };
                let images = self.data.train.batch(chunk)?;
                let si = SideInfo::new(self.cfg, level, snr)?;
                let mut noise = NoiseModel::new(snr, noise_seedling);
                noise_seedling = noise_seedling.wrapping_add(1);
                let stats = self
                    .step_batch(&images, &si, weights[level - 1], &mut noise)
                    .map_err(|e| self.diagnose_divergence(dir, epoch, e))?;
                loss_sum += stats.loss;
                mse_sum += stats.mse;
                level_batches[level - 1] += 1;
                batches += 1;
            }

            let (val_psnr, val_mse) = self.validate(epoch)?;
            let progress = tracker.observe(val_mse);
            if progress.improved {
                best_epoch = epoch;
                best_psnr = val_psnr.clone();
                save_checkpoint(
                    dir,
                    "best",
                    self.codec.store(),
                    &CheckpointMeta {
                        config_hash: self.cfg.config_hash(),
                        model_hash: self.cfg.model_hash(),
                        label: self.mode.label(),
                        epoch,
                        val_mse,
                        val_psnr_db: val_psnr.clone(),
                    },
                )?;
            }

            // Gap to the upper bounds drives next epoch's weights.
            let mut deltas = Vec::new();
            if let Some(state) = &mut self.dwa {
                deltas = self
                    .bounds
                    .iter()
                    .zip(&val_psnr)
                    .map(|(bound, psnr)| bound - psnr)
                    .collect();
                state.update(&deltas)?;
            }

            let record = EpochRecord {
                epoch,
                lr,
                weights,
                train_loss: loss_sum / batches as f64,
                train_mse: mse_sum / batches as f64,
                level_batches,
                val_levels: self.val_levels.clone(),
                val_psnr_db: val_psnr,
                val_mse,
                deltas_db: deltas,
                next_weights: self.weights(),
                improved: progress.improved,
            };
            log_file.write_all(serde_json::to_string(&record)?.as_bytes())?;
            log_file.write_all(b"\n")?;
            log::info!(
                "[{}] epoch {epoch}: loss {:.5} val_mse {:.2} val_psnr {:?} lr {lr:.2e}{}",
                self.mode.label(),
                record.train_loss,
                record.val_mse,
                record
                    .val_psnr_db
                    .iter()
                    .map(|p| (p * 100.0).round() / 100.0)
                    .collect::<Vec<_>>(),
                if progress.improved { " *" } else { "" },
            );
            log.push(record);

            if train_cfg.snapshot_every > 0 && epoch % train_cfg.snapshot_every == 0 {
                save_weights(
                    self.codec.store(),
                    &dir.join(format!("epoch_{epoch:05}.safetensors")),
                )?;
            }
            if progress.decay_lr {
                lr *= train_cfg.lr_decay;
                self.opt.set_learning_rate(lr);
            }
            if progress.stop {
                stopped_early = true;
                break;
            }
        }

        let epochs_run = log.len();
        Ok(TrainOutcome {
            label: self.mode.label(),
            run_dir: dir.to_path_buf(),
            best_epoch,
            best_val_mse: tracker.best(),
            best_val_psnr_db: best_psnr,
            epochs_run,
            stopped_early,
            log,
        })
    }

    /// On a non-finite loss, dump the current weights next to the run so the
    /// failure can be inspected, then pass the error through.
    fn diagnose_divergence(&self, dir: &Path, epoch: usize, err: Error) -> Error {
        if let Error::Train(msg) = &err {
            let path = dir.join("diverged.safetensors");
            let _ = save_weights(self.codec.store(), &path);
            return Error::Train(format!(
                "{msg} at epoch {epoch}; parameters dumped to {}",
                path.display()
            ));
        }
        err
    }
}

/// Train one single-level model per grid level and collect their best
/// validation PSNRs into a registry (saved as `registry.json` under `dir`).
pub fn train_upper_bounds(
    cfg: &ExperimentConfig,
    data: &DataBundle,
    dir: &Path,
) -> Result<UpperBoundRegistry> {
    std::fs::create_dir_all(dir)?;
    let mut registry = UpperBoundRegistry::new();
    for level in 1..=cfg.grid.levels {
        let mut trainer =
            Trainer::new(cfg, data, TrainMode::SingleLevel { level }, None)?;
        let out = trainer.run(&dir.join(format!("bound-l{level}")))?;
        log::info!(
            "bound level {level}: {:.2} dB at epoch {}",
            out.best_val_psnr_db[0],
            out.best_epoch
        );
        registry.insert(BoundEntry {
            level,
            rho: cfg.grid.rho_at(level),
            snr_db: cfg.train.snr_val(),
            psnr_db: out.best_val_psnr_db[0],
            provenance: Provenance::Trained,
            model_hash: cfg.model_hash(),
        });
    }
    registry.save(dir.join("registry.json"))?;
    Ok(registry)
}
