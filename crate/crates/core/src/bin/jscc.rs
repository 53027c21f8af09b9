//! Command-line driver: train models, evaluate sweeps, run the digital
//! baseline, and assemble reports.
//!
//! ```text
//! jscc train --config configs/cifar-l4.toml
//! jscc train-bounds --config configs/cifar-l4.toml
//! jscc eval-sweep --checkpoint runs/<hash>-adaptive --snr 7
//! jscc baseline --config configs/cifar-l4.toml --snr 7 --mock-codec
//! jscc plot-policy --out policy.svg
//! jscc report --run runs/<hash>-adaptive
//! ```
//!
//! The output root defaults to `runs/` and can be overridden with
//! `--out` or the `JSCC_OUT_DIR` environment variable.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use jscc_core::baseline::{
    read_baseline_csv, separation_baseline, write_baseline_csv, BpgCompressor, Compressor,
    MockCompressor,
};
use jscc_core::checkpoint::{load_codec, load_meta, run_dir};
use jscc_core::config::ExperimentConfig;
use jscc_core::data::load_bundle;
use jscc_core::dwa::{UpperBoundRegistry, WeightPolicy};
use jscc_core::eval::{
    read_train_log, run_sweep, write_report, LabeledTable, ReportInputs, ResultTable, SweepAxis,
    SweepSpec,
};
use jscc_core::plot::{line_plot, PlotSpec, Series};
use jscc_core::trainer::{train_upper_bounds, TrainMode, Trainer};
use jscc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "jscc", version, about = "Adaptive-bandwidth image transmission")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Offset every seed role by this value (a cheap way to rerun with
    /// fresh randomness).
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (default: $JSCC_OUT_DIR or `runs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = cfg.seeds.offset(seed);
        }
        Ok(cfg)
    }

    fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("JSCC_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the adaptive model over the whole bandwidth/SNR grid.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Keep all loss weights at 1 instead of adapting them.
        #[arg(long)]
        no_dwa: bool,
        /// Upper-bound registry (default: `<out>/bounds/registry.json`).
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Train one single-level model per grid level and record their best
    /// validation PSNRs as the upper-bound registry.
    TrainBounds {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Evaluate a trained checkpoint over grid points.
    EvalSweep {
        /// Run directory holding `config.toml` and `best.safetensors`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this config's `[data]` section instead of the
        /// checkpoint's (must describe the same grid and model).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Offset the channel seed for fresh noise draws.
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed SNR for a bandwidth sweep (default: the config's
        /// validation SNR).
        #[arg(long)]
        snr: Option<f64>,
        /// Comma-separated SNR list; switches to an SNR sweep (requires
        /// --level or --rho).
        #[arg(long, value_delimiter = ',')]
        snrs: Vec<f64>,
        /// Grid level for an SNR sweep.
        #[arg(long)]
        level: Option<usize>,
        /// Bandwidth ratio for an SNR sweep (must be on the grid).
        #[arg(long)]
        rho: Option<f64>,
        /// Independent noise repetitions per point.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Cap on test images.
        #[arg(long)]
        max_images: Option<usize>,
        /// CSV output path (default: `<checkpoint>/sweep-<axis>.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Capacity/separation baseline over the same grid.
    Baseline {
        #[command(flatten)]
        common: ConfigArgs,
        /// Channel SNR in dB (default: the config's validation SNR).
        #[arg(long)]
        snr: Option<f64>,
        /// Use the built-in mock codec instead of BPG.
        #[arg(long)]
        mock_codec: bool,
        /// Cap on test images.
        #[arg(long)]
        max_images: Option<usize>,
    },
    /// Plot the loss-weight policy curve.
    PlotPolicy {
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.25)]
        beta: f64,
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
        /// SVG output path.
        #[arg(long, default_value = "policy.svg")]
        out: PathBuf,
    },
    /// Assemble a markdown report (tables + figures) from a run directory.
    Report {
        /// Run directory (training outputs plus any sweep CSVs).
        #[arg(long)]
        run: PathBuf,
        /// Report output directory (default: `<run>/report`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, no_dwa, registry } => {
            let cfg = common.load()?;
            let root = common.out_root();
            let bundle = load_bundle(&cfg)?;
            let reg = if no_dwa {
                None
            } else {
                let path = registry
                    .unwrap_or_else(|| root.join("bounds").join("registry.json"));
                if !path.exists() {
                    return Err(Error::Train(format!(
                        "no upper-bound registry at {}; run `train-bounds` first \
                         or pass --no-dwa",
                        path.display()
                    )));
                }
                Some(UpperBoundRegistry::load(&path)?)
            };
            let mode = TrainMode::Adaptive { dwa: !no_dwa };
            let label = if no_dwa { "adaptive-no-dwa" } else { "adaptive" };
            let dir = run_dir(&root, &cfg, label)?;
            let mut trainer = Trainer::new(&cfg, &bundle, mode, reg.as_ref())?;
            let out = trainer.run(&dir)?;
            println!(
                "{label}: best epoch {} of {} (val MSE {:.3}), checkpoint in {}",
                out.best_epoch,
                out.epochs_run,
                out.best_val_mse,
                out.run_dir.display()
            );
            for (i, psnr) in out.best_val_psnr_db.iter().enumerate() {
                println!("  level {}: {:.2} dB", i + 1, psnr);
            }
        }
        Command::TrainBounds { common } => {
            let cfg = common.load()?;
            let bundle = load_bundle(&cfg)?;
            let dir = common.out_root().join("bounds");
            let registry = train_upper_bounds(&cfg, &bundle, &dir)?;
            println!("upper bounds written to {}", dir.join("registry.json").display());
            for entry in registry.entries() {
                println!(
                    "  level {} (rho {:.4}): {:.2} dB at {} dB",
                    entry.level, entry.rho, entry.psnr_db, entry.snr_db
                );
            }
        }
        Command::EvalSweep {
            checkpoint,
            config,
            seed,
            snr,
            snrs,
            level,
            rho,
            reps,
            max_images,
            out,
        } => {
            let (codec, meta) = load_codec(&checkpoint)?;
            let mut cfg = codec.config().clone();
            if let Some(path) = config {
                let override_cfg = ExperimentConfig::load(&path)?;
                if override_cfg.model_hash() != cfg.model_hash() {
                    return Err(Error::Eval(format!(
                        "config {} describes a different grid/model than the checkpoint \
                         ({} vs {})",
                        path.display(),
                        override_cfg.model_hash(),
                        cfg.model_hash()
                    )));
                }
                cfg.data = override_cfg.data;
            }
            if let Some(seed) = seed {
                cfg.seeds = cfg.seeds.offset(seed);
            }
            let bundle = load_bundle(&cfg)?;
            let (axis, stem) = if snrs.is_empty() {
                let snr = snr.unwrap_or_else(|| cfg.train.snr_val());
                (SweepAxis::Rho { snr_db: snr }, "sweep-rho".to_string())
            } else {
                let level = resolve_level(&cfg, level, rho)?;
                (SweepAxis::Snr { level, snrs_db: snrs }, format!("sweep-snr-l{level}"))
            };
            let spec = SweepSpec { axis, reps, max_images };
            let table = run_sweep(
                &codec,
                &bundle.test,
                &bundle.label,
                &spec,
                cfg.seeds.channel,
            )?;
            let path = out.unwrap_or_else(|| checkpoint.join(format!("{stem}.csv")));
            table.write_csv(&path)?;
            println!("checkpoint: {} (epoch {})", meta.label, meta.epoch);
            for row in &table.rows {
                println!(
                    "  level {} (rho {:.4}) @ {} dB: {:.2} dB (+/- {:.2})",
                    row.level, row.rho, row.snr_db, row.psnr_db, row.psnr_std_db
                );
            }
            println!("written to {}", path.display());
        }
        Command::Baseline { common, snr, mock_codec, max_images } => {
            let cfg = common.load()?;
            let bundle = load_bundle(&cfg)?;
            let snr = snr.unwrap_or_else(|| cfg.train.snr_val());
            let comp: Box<dyn Compressor> = if mock_codec {
                Box::new(MockCompressor::default())
            } else {
                match BpgCompressor::locate() {
                    Some(c) => Box::new(c),
                    None => {
                        return Err(Error::CompressorUnavailable(
                            "bpgenc/bpgdec not found on PATH; install libbpg \
                             or pass --mock-codec"
                                .into(),
                        ))
                    }
                }
            };
            let rows = separation_baseline(&bundle.test, &cfg, snr, comp.as_ref(), max_images)?;
            let root = common.out_root();
            std::fs::create_dir_all(&root)?;
            let path = root.join(format!("baseline-{}.csv", comp.name()));
            write_baseline_csv(&path, &rows, &cfg, &bundle.label)?;
            for row in &rows {
                match row.psnr_db {
                    Some(psnr) => println!(
                        "  level {} (rho {:.4}): {} bits -> {:.2} dB ({}/{} feasible)",
                        row.level, row.rho, row.budget_bits, psnr, row.feasible, row.images
                    ),
                    None => println!(
                        "  level {} (rho {:.4}): {} bits -> infeasible for {} codec",
                        row.level, row.rho, row.budget_bits, row.codec
                    ),
                }
            }
            println!("written to {}", path.display());
        }
        Command::PlotPolicy { alpha, beta, gamma, out } => {
            let policy = WeightPolicy { alpha, beta, gamma };
            let cap_at = beta + (1.0 + gamma).log2() / alpha;
            let lo = beta - 1.5;
            let hi = cap_at + 1.0;
            let points: Vec<(f64, f64)> = (0..=400)
                .map(|i| {
                    let d = lo + (hi - lo) * i as f64 / 400.0;
                    (d, policy.weight(d))
                })
                .collect();
            line_plot(
                &out,
                &PlotSpec::new(
                    format!("Loss weight policy (alpha={alpha}, beta={beta}, cap={gamma})"),
                    "PSNR gap to upper bound [dB]",
                    "loss weight",
                ),
                &[Series::new("weight", points)],
            )?;
            println!("policy curve written to {}", out.display());
        }
        Command::Report { run, out } => {
            let cfg = ExperimentConfig::load(&run.join("config.toml"))?;
            let meta = load_meta(&run.join("best.json")).ok();
            let log = read_train_log(&run.join("train_log.jsonl")).unwrap_or_default();
            let bounds = [
                run.join("registry.json"),
                run.parent().unwrap_or(Path::new(".")).join("bounds/registry.json"),
            ]
            .iter()
            .find(|p| p.exists())
            .and_then(|p| UpperBoundRegistry::load(p).ok());
            let mut sweeps = Vec::new();
            for entry in std::fs::read_dir(&run)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "csv") {
                    if let Ok(table) = ResultTable::read_csv(&path) {
                        sweeps.push(table);
                    }
                }
            }
            let dir = out.unwrap_or_else(|| run.join("report"));
            let path = write_report(
                &dir,
                &ReportInputs {
                    cfg: &cfg,
                    meta: meta.as_ref(),
                    sweeps: &sweeps,
                    bounds: bounds.as_ref(),
                    log: &log,
                },
            )?;
            println!("report written to {}", path.display());
        }
    }
    Ok(())
}

/// Turn `--level`/`--rho` into a grid level, naming the grid on failure.
fn resolve_level(
    cfg: &ExperimentConfig,
    level: Option<usize>,
    rho: Option<f64>,
) -> Result<usize> {
    match (level, rho) {
        (Some(l), None) => {
            if l == 0 || l > cfg.grid.levels {
                return Err(Error::Eval(format!(
                    "level {l} is outside the 1..={} grid",
                    cfg.grid.levels
                )));
            }
            Ok(l)
        }
        (None, Some(r)) => cfg.grid.level_of(r).ok_or_else(|| {
            Error::Eval(format!(
                "rho {r} is not on the grid ({})",
                cfg.grid
                    .rho
                    .iter()
                    .map(|x| format!("{x:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }),
        (Some(_), Some(_)) => {
            Err(Error::Eval("pass either --level or --rho, not both".into()))
        }
        (None, None) => {
            Err(Error::Eval("an SNR sweep needs --level or --rho".into()))
        }
    }
}
