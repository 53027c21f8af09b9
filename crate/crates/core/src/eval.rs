//! Evaluation sweeps, result tables, and report assembly.
//!
//! A sweep runs the full encode/channel/decode chain over a test set at a
//! series of grid points — either every bandwidth level at one SNR, or one
//! level across several SNRs — and records mean/std PSNR per point. Results
//! land in a [`ResultTable`] that serializes to CSV with a metadata header.
//! Noise at each point is seeded from `(channel_seed, level, snr,
//! repetition)` alone, so any subset of points can be recomputed
//! independently and reproduces bit-identically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineTable;
use crate::channel::NoiseModel;
use crate::checkpoint::CheckpointMeta;
use crate::codec::{Codec, SideInfo};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::dwa::UpperBoundRegistry;
use crate::error::{Error, Result};
use crate::metrics::{batch_psnr, mean_psnr, std_psnr, PsnrResult};
use crate::nn::derive_seed;
use crate::plot::{line_plot, PlotSpec, Series};
use crate::trainer::EpochRecord;

/// Which axis a sweep walks.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Every grid level at one SNR.
    Rho { snr_db: f64 },
    /// One grid level across several SNRs.
    Snr { level: usize, snrs_db: Vec<f64> },
}

/// A sweep request.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Independent noise repetitions per point (PSNR pools across them).
    pub reps: usize,
    /// Cap on test images (None = whole set).
    pub max_images: Option<usize>,
}

/// One evaluated grid point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    pub scheme: String,
    pub mode: String,
    pub level: usize,
    pub rho: f64,
    pub snr_db: f64,
    pub images: usize,
    pub reps: usize,
    /// Mean PSNR over all images and repetitions (dB).
    pub psnr_db: f64,
    /// Standard deviation of per-image PSNR (dB).
    pub psnr_std_db: f64,
}

/// A sweep's rows plus the metadata needed to reproduce them.
#[derive(Debug, Clone)]
pub struct ResultTable {
    pub config_hash: String,
    pub model_hash: String,
    pub dataset: String,
    pub channel_seed: u64,
    /// Unix seconds at creation; ignored by [`ResultTable::content_eq`].
    pub created: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Equality of everything that is supposed to be reproducible — i.e.
    /// all content except the creation timestamp.
    pub fn content_eq(&self, other: &ResultTable) -> bool {
        self.config_hash == other.config_hash
            && self.model_hash == other.model_hash
            && self.dataset == other.dataset
            && self.channel_seed == other.channel_seed
            && self.rows == other.rows
    }

    /// CSV with `# key=value` metadata lines before the header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        writeln!(text, "# config_hash={}", self.config_hash).unwrap();
        writeln!(text, "# model_hash={}", self.model_hash).unwrap();
        writeln!(text, "# dataset={}", self.dataset).unwrap();
        writeln!(text, "# channel_seed={}", self.channel_seed).unwrap();
        writeln!(text, "# created={}", self.created).unwrap();
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Eval(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| Error::Eval(e.to_string()))?;
        text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ResultTable> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Eval(format!("cannot read {}: {e}", path.display())))?;
        let mut meta = std::collections::BTreeMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let field = |k: &str| -> Result<String> {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Eval(format!("{} lacks metadata {k}", path.display())))
        };
        let mut rows = Vec::new();
        let mut r = csv::Reader::from_reader(body.as_bytes());
        for row in r.deserialize() {
            rows.push(row.map_err(|e| Error::Eval(e.to_string()))?);
        }
        Ok(ResultTable {
            config_hash: field("config_hash")?,
            model_hash: field("model_hash")?,
            dataset: field("dataset")?,
            channel_seed: field("channel_seed")?
                .parse()
                .map_err(|e| Error::Eval(format!("bad channel_seed: {e}")))?,
            created: field("created")?,
            rows,
        })
    }
}

fn now_unix() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}

/// Evaluate one grid point: pooled per-image PSNR over `reps` independent
/// noise draws. The noise seed depends only on the channel seed and the
/// point itself.
pub fn eval_point(
    codec: &Codec,
    test: &Dataset,
    level: usize,
    snr_db: f64,
    reps: usize,
    max_images: Option<usize>,
    channel_seed: u64,
) -> Result<Vec<PsnrResult>> {
    if reps == 0 {
        return Err(Error::Eval("reps must be at least 1".into()));
    }
    let cfg = codec.config();
    let si = SideInfo::new(cfg, level, snr_db)?;
    let n = max_images.unwrap_or(usize::MAX).min(test.len());
    if n == 0 {
        return Err(Error::Eval("empty test set".into()));
    }
    let batch = cfg.train.batch;
    let mut results = Vec::with_capacity(n * reps);
    for rep in 0..reps {
        let mut noise = NoiseModel::new(
            snr_db,
            derive_seed(channel_seed, &format!("eval-l{level}-snr{snr_db}-rep{rep}")),
        );
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
            let images = test.batch(&idx)?;
            let recon = codec.run_point(&images, &si, &mut noise)?;
            results.extend(batch_psnr(&recon, &images)?);
            start += batch;
        }
    }
    Ok(results)
}

/// Run a sweep and collect the table.
pub fn run_sweep(
    codec: &Codec,
    test: &Dataset,
    dataset_label: &str,
    spec: &SweepSpec,
    channel_seed: u64,
) -> Result<ResultTable> {
    let cfg = codec.config();
    let points: Vec<(usize, f64)> = match &spec.axis {
        SweepAxis::Rho { snr_db } => {
            (1..=cfg.grid.levels).map(|l| (l, *snr_db)).collect()
        }
        SweepAxis::Snr { level, snrs_db } => {
            if snrs_db.is_empty() {
                return Err(Error::Eval("SNR sweep needs at least one SNR".into()));
            }
            snrs_db.iter().map(|&s| (*level, s)).collect()
        }
    };
    let mut rows = Vec::with_capacity(points.len());
    for (level, snr_db) in points {
        let results =
            eval_point(codec, test, level, snr_db, spec.reps, spec.max_images, channel_seed)?;
        let images = results.len() / spec.reps;
        rows.push(ResultRow {
            scheme: cfg.scheme.to_string(),
            mode: format!("{:?}", codec.scheme()).to_lowercase(),
            level,
            rho: cfg.grid.rho_at(level),
            snr_db,
            images,
            reps: spec.reps,
            psnr_db: mean_psnr(&results),
            psnr_std_db: std_psnr(&results),
        });
        log::info!(
            "eval level {level} @ {snr_db} dB: {:.2} dB over {images} images x {} reps",
            rows.last().unwrap().psnr_db,
            spec.reps
        );
    }
    Ok(ResultTable {
        config_hash: cfg.config_hash(),
        model_hash: cfg.model_hash(),
        dataset: dataset_label.to_string(),
        channel_seed,
        created: now_unix(),
        rows,
    })
}

/// A sweep table labeled with the run it came from ("adaptive",
/// "adaptive-no-dwa", "refinement", ...), for cross-scheme comparison.
pub struct LabeledTable {
    pub label: String,
    pub table: ResultTable,
}

/// Everything a report can draw on.
pub struct ReportInputs<'a> {
    pub cfg: &'a ExperimentConfig,
    pub meta: Option<&'a CheckpointMeta>,
    pub sweeps: &'a [ResultTable],
    pub bounds: Option<&'a UpperBoundRegistry>,
    pub log: &'a [EpochRecord],
    /// Labeled sweeps from this run and sibling runs; merged side by side.
    pub comparison: &'a [LabeledTable],
    /// Separation-baseline rows, when a baseline CSV is present.
    pub baseline: Option<&'a BaselineTable>,
}

/// Write `report.md` (plus SVG figures) into `dir`, returning the report
/// path.
pub fn write_report(dir: &Path, inputs: &ReportInputs) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let cfg = inputs.cfg;
    let dims = cfg.dimensions()?;
    let mut md = String::new();
    writeln!(md, "# Adaptive-bandwidth transmission report\n").unwrap();
    writeln!(md, "- scheme: `{}`, grid mode: `{:?}`", cfg.scheme, cfg.grid.mode).unwrap();
    writeln!(
        md,
        "- grid: {} levels, rho = {}",
        cfg.grid.levels,
        cfg.grid
            .rho
            .iter()
            .map(|r| format!("{r:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    )
    .unwrap();
    writeln!(md, "- config hash: `{}`", cfg.config_hash()).unwrap();
    writeln!(
        md,
        "- seeds: init {}, channel {}, sampling {}, data {}",
        cfg.seeds.init, cfg.seeds.channel, cfg.seeds.sampling, cfg.seeds.data
    )
    .unwrap();
    writeln!(md, "\n```\n{dims}\n```").unwrap();

    if let Some(meta) = inputs.meta {
        writeln!(
            md,
            "\n## Checkpoint\n\n- label: `{}`\n- best epoch: {}\n- validation MSE: {:.3}",
            meta.label, meta.epoch, meta.val_mse
        )
        .unwrap();
        if let Some(bounds) = inputs.bounds {
            writeln!(md, "\n| level | rho | PSNR (dB) | bound (dB) | gap (dB) |").unwrap();
            writeln!(md, "|---|---|---|---|---|").unwrap();
            for (i, psnr) in meta.val_psnr_db.iter().enumerate() {
                let level = i + 1;
                let bound =
                    bounds.lookup(level, cfg.train.snr_val(), &cfg.model_hash());
                let (b, gap) = match bound {
                    Some(b) => (format!("{b:.2}"), format!("{:.2}", b - psnr)),
                    None => ("-".into(), "-".into()),
                };
                writeln!(
                    md,
                    "| {level} | {:.4} | {psnr:.2} | {b} | {gap} |",
                    cfg.grid.rho_at(level)
                )
                .unwrap();
            }
        }
    }

    if !inputs.log.is_empty() {
        let weights: Vec<Series> = (0..cfg.grid.levels)
            .map(|i| {
                Series::new(
                    format!("level {}", i + 1),
                    inputs
                        .log
                        .iter()
                        .filter(|r| r.weights.len() > i)
                        .map(|r| (r.epoch as f64, r.weights[i]))
                        .collect(),
                )
            })
            .collect();
        let fig = dir.join("weights.svg");
        if line_plot(
            &fig,
            &PlotSpec::new("Loss weights by epoch", "epoch", "weight"),
            &weights,
        )
        .is_ok()
        {
            writeln!(md, "\n## Training\n\n![loss weights](weights.svg)").unwrap();
        }
        let psnr_series: Vec<Series> = (0..cfg.grid.levels)
            .map(|i| {
                Series::new(
                    format!("level {}", i + 1),
                    inputs
                        .log
                        .iter()
                        .filter(|r| r.val_psnr_db.len() > i)
                        .map(|r| (r.epoch as f64, r.val_psnr_db[i]))
                        .collect(),
                )
            })
            .collect();
        let fig = dir.join("val_psnr.svg");
        if line_plot(
            &fig,
            &PlotSpec::new("Validation PSNR by epoch", "epoch", "PSNR [dB]"),
            &psnr_series,
        )
        .is_ok()
        {
            writeln!(md, "\n![validation PSNR](val_psnr.svg)").unwrap();
        }
    }

    for (i, table) in inputs.sweeps.iter().enumerate() {
        writeln!(
            md,
            "\n## Sweep {} ({})\n\n| level | rho | SNR (dB) | PSNR (dB) | std |",
            i + 1,
            table.dataset
        )
        .unwrap();
        writeln!(md, "|---|---|---|---|---|").unwrap();
        for row in &table.rows {
            writeln!(
                md,
                "| {} | {:.4} | {} | {:.2} | {:.2} |",
                row.level, row.rho, row.snr_db, row.psnr_db, row.psnr_std_db
            )
            .unwrap();
        }
        let series = vec![Series::new(
            "PSNR",
            table
                .rows
                .iter()
                .map(|r| match sweep_is_rho(table) {
                    true => (r.rho, r.psnr_db),
                    false => (r.snr_db, r.psnr_db),
                })
                .collect(),
        )];
        let x_label = if sweep_is_rho(table) { "bandwidth ratio" } else { "SNR [dB]" };
        let fig = dir.join(format!("sweep_{}.svg", i + 1));
        if line_plot(
            &fig,
            &PlotSpec::new(format!("Sweep {}", i + 1), x_label, "PSNR [dB]"),
            &series,
        )
        .is_ok()
        {
            writeln!(md, "\n![sweep {}](sweep_{}.svg)", i + 1, i + 1).unwrap();
        }
    }

    // Side-by-side scheme comparison: this run and its siblings (adaptive
    // with and without weighting, refinement), the per-level bound models,
    // and the separation baseline, one row per (scheme, rho, SNR). All
    // tables must refer to the same test set.
    let mut datasets: Vec<&str> = inputs
        .comparison
        .iter()
        .map(|lt| lt.table.dataset.as_str())
        .chain(inputs.baseline.map(|b| b.dataset.as_str()))
        .collect();
    datasets.sort_unstable();
    datasets.dedup();
    if datasets.len() > 1 {
        return Err(Error::Eval(format!(
            "comparison inputs evaluate different test sets: {}",
            datasets.join(", ")
        )));
    }
    let mut rows: Vec<(String, usize, f64, f64, Option<f64>)> = Vec::new();
    for lt in inputs.comparison {
        for r in &lt.table.rows {
            rows.push((lt.label.clone(), r.level, r.rho, r.snr_db, Some(r.psnr_db)));
        }
    }
    if let Some(bounds) = inputs.bounds {
        if !inputs.comparison.is_empty() {
            for e in bounds.entries() {
                rows.push(("separate-models".into(), e.level, e.rho, e.snr_db, Some(e.psnr_db)));
            }
        }
    }
    if let Some(baseline) = inputs.baseline {
        for r in &baseline.rows {
            rows.push((format!("separation-{}", r.codec), r.level, r.rho, r.snr_db, r.psnr_db));
        }
    }
    if !rows.is_empty() {
        rows.sort_by(|a, b| {
            (&a.0, a.1, a.3).partial_cmp(&(&b.0, b.1, b.3)).expect("finite sort keys")
        });
        rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1 && a.3 == b.3);
        let mut csv = String::from("scheme,level,rho,snr_db,psnr_db\n");
        writeln!(md, "\n## Scheme comparison\n").unwrap();
        writeln!(md, "| scheme | level | rho | SNR (dB) | PSNR (dB) |").unwrap();
        writeln!(md, "|---|---|---|---|---|").unwrap();
        for (scheme, level, rho, snr, psnr) in &rows {
            let shown = psnr.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into());
            writeln!(md, "| {scheme} | {level} | {rho:.4} | {snr} | {shown} |").unwrap();
            let cell = psnr.map(|p| format!("{p}")).unwrap_or_default();
            writeln!(csv, "{scheme},{level},{rho},{snr},{cell}").unwrap();
        }
        std::fs::write(dir.join("comparison.csv"), csv)?;
        writeln!(md, "\nExported to `comparison.csv`.").unwrap();
    }

    let path = dir.join("report.md");
    std::fs::write(&path, md)?;
    Ok(path)
}

/// Heuristic: a table whose rows vary in rho but not SNR is a rho sweep.
fn sweep_is_rho(table: &ResultTable) -> bool {
    table.rows.len() < 2 || table.rows.iter().all(|r| r.snr_db == table.rows[0].snr_db)
}

/// Read back a `train_log.jsonl`.
pub fn read_train_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Eval(format!("cannot read {}: {e}", path.display())))?;
    text.lines().map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::tests::toy_config;
    use crate::data::load_bundle;

    fn tiny_setup() -> (ExperimentConfig, Codec, Dataset) {
        let mut cfg = toy_config("adaptive-bandwidth", "varying-features");
        cfg.model.features = 16;
        cfg.model.heads = vec![4, 4];
        cfg.data.test = 8;
        cfg.train.batch = 4;
        let bundle = load_bundle(&cfg).unwrap();
        let codec = Codec::new(&cfg).unwrap();
        (cfg, codec, bundle.test)
    }

    #[test]
    fn rho_sweep_covers_every_level() {
        let (cfg, codec, test) = tiny_setup();
        let spec = SweepSpec {
            axis: SweepAxis::Rho { snr_db: 7.0 },
            reps: 2,
            max_images: Some(4),
        };
        let table = run_sweep(&codec, &test, "test-set", &spec, 99).unwrap();
        assert_eq!(table.rows.len(), cfg.grid.levels);
        for (i, row) in table.rows.iter().enumerate() {
            assert_eq!(row.level, i + 1);
            assert_eq!(row.rho, cfg.grid.rho_at(i + 1));
            assert_eq!(row.snr_db, 7.0);
            assert_eq!(row.images, 4);
            assert!(row.psnr_db.is_finite());
        }
    }

    #[test]
    fn sweeps_reproduce_exactly() {
        let (_, codec, test) = tiny_setup();
        let spec = SweepSpec {
            axis: SweepAxis::Snr { level: 2, snrs_db: vec![4.0, 10.0] },
            reps: 1,
            max_images: Some(4),
        };
        let a = run_sweep(&codec, &test, "t", &spec, 7).unwrap();
        let b = run_sweep(&codec, &test, "t", &spec, 7).unwrap();
        assert!(a.content_eq(&b));
        // A different channel seed gives different noise, hence different
        // PSNR.
        let c = run_sweep(&codec, &test, "t", &spec, 8).unwrap();
        assert!(!a.content_eq(&c));
        // content_eq ignores the timestamp.
        let mut d = a.clone();
        d.created = "0".into();
        assert!(a.content_eq(&d));
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let (_, codec, test) = tiny_setup();
        let spec =
            SweepSpec { axis: SweepAxis::Rho { snr_db: 4.0 }, reps: 1, max_images: Some(4) };
        let table = run_sweep(&codec, &test, "round-trip", &spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        table.write_csv(&path).unwrap();
        let back = ResultTable::read_csv(&path).unwrap();
        assert!(table.content_eq(&back), "{back:?}");
        assert_eq!(table.created, back.created);

        // Metadata is required.
        std::fs::write(&path, "scheme,mode\n").unwrap();
        assert!(ResultTable::read_csv(&path).is_err());
    }

    #[test]
    fn off_grid_level_is_refused() {
        let (_, codec, test) = tiny_setup();
        let err = eval_point(&codec, &test, 9, 7.0, 1, None, 1).unwrap_err();
        assert!(matches!(err, Error::Eval(_)), "{err}");
        assert!(eval_point(&codec, &test, 1, 7.0, 0, None, 1).is_err());
    }

    #[test]
    fn report_includes_tables_and_figures() {
        let (cfg, codec, test) = tiny_setup();
        let spec =
            SweepSpec { axis: SweepAxis::Rho { snr_db: 7.0 }, reps: 1, max_images: Some(4) };
        let table = run_sweep(&codec, &test, "report-test", &spec, 3).unwrap();
        let log = vec![EpochRecord {
            epoch: 1,
            lr: 1e-4,
            weights: vec![1.0; cfg.grid.levels],
            train_loss: 0.5,
            train_mse: 0.5,
            level_batches: vec![1; cfg.grid.levels],
            val_levels: (1..=cfg.grid.levels).collect(),
            val_psnr_db: vec![20.0; cfg.grid.levels],
            val_mse: 100.0,
            deltas_db: vec![],
            next_weights: vec![1.0; cfg.grid.levels],
            improved: true,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = write_report(
            dir.path(),
            &ReportInputs {
                cfg: &cfg,
                meta: None,
                sweeps: std::slice::from_ref(&table),
                bounds: None,
                log: &log,
                comparison: &[],
                baseline: None,
            },
        )
        .unwrap();
        let md = std::fs::read_to_string(&path).unwrap();
        assert!(md.contains("## Sweep 1"));
        assert!(md.contains("- seeds: init"));
        assert!(md.contains("weights.svg"));
        assert!(dir.path().join("weights.svg").exists());
        assert!(dir.path().join("sweep_1.svg").exists());
        assert!(!dir.path().join("comparison.csv").exists());
    }

    #[test]
    fn report_merges_labeled_schemes_into_comparison() {
        use crate::baseline::{BaselineRow, BaselineTable};

        let (cfg, codec, test) = tiny_setup();
        let spec =
            SweepSpec { axis: SweepAxis::Rho { snr_db: 7.0 }, reps: 1, max_images: Some(4) };
        let table = run_sweep(&codec, &test, "test-set", &spec, 3).unwrap();
        let mut plain = table.clone();
        for r in &mut plain.rows {
            r.psnr_db -= 0.5;
        }
        let comparison = vec![
            LabeledTable { label: "adaptive".into(), table: table.clone() },
            LabeledTable { label: "adaptive-no-dwa".into(), table: plain },
        ];
        let baseline = BaselineTable {
            dataset: "test-set".into(),
            rows: vec![
                BaselineRow {
                    codec: "mock".into(),
                    level: 1,
                    rho: cfg.grid.rho_at(1),
                    snr_db: 7.0,
                    budget_bits: 496,
                    images: 4,
                    feasible: 0,
                    psnr_db: None,
                    mean_bits: None,
                },
                BaselineRow {
                    codec: "mock".into(),
                    level: 2,
                    rho: cfg.grid.rho_at(2),
                    snr_db: 7.0,
                    budget_bits: 993,
                    images: 4,
                    feasible: 4,
                    psnr_db: Some(24.5),
                    mean_bits: Some(800.0),
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = write_report(
            dir.path(),
            &ReportInputs {
                cfg: &cfg,
                meta: None,
                sweeps: &[],
                bounds: None,
                log: &[],
                comparison: &comparison,
                baseline: Some(&baseline),
            },
        )
        .unwrap();
        let md = std::fs::read_to_string(&path).unwrap();
        assert!(md.contains("## Scheme comparison"));
        let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "scheme,level,rho,snr_db,psnr_db");
        // One row per (scheme, rho, snr): two sweeps x levels + two baseline.
        assert_eq!(lines.len(), 1 + 2 * cfg.grid.levels + 2);
        for scheme in ["adaptive", "adaptive-no-dwa", "separation-mock"] {
            assert!(
                lines.iter().any(|l| l.starts_with(&format!("{scheme},"))),
                "no {scheme} rows in {csv}"
            );
        }
        // The infeasible baseline point keeps its row with an empty PSNR.
        assert!(lines.iter().any(|l| l.starts_with("separation-mock,1,") && l.ends_with(',')));

        // Tables evaluated on different test sets refuse to merge.
        let mut other = comparison;
        other[1].table.dataset = "something-else".into();
        let err = write_report(
            dir.path(),
            &ReportInputs {
                cfg: &cfg,
                meta: None,
                sweeps: &[],
                bounds: None,
                log: &[],
                comparison: &other,
                baseline: Some(&baseline),
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("test set"), "{err}");
    }
}
