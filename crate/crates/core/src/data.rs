//! Image corpora: CIFAR-10 binary batches and a seeded synthetic stand-in.
//!
//! Images are stored as raw `u8` planes in channel-major order (the CIFAR
//! binary layout) and materialized into `(batch, c, h, w)` f32 tensors on the
//! [0, 1] scale on demand. When no CIFAR directory is available (config
//! `data.path` or `JSCC_CIFAR_DIR`), [`load_bundle`] falls back to a
//! deterministic synthetic corpus of smooth multi-scale images so training
//! and evaluation stay runnable end to end; every bundle carries a label
//! naming its substrate.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::config::{DataConfig, DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::nn::derive_seed;

/// Bytes per image and per record in the CIFAR-10 binary format.
const CIFAR_IMAGE_BYTES: usize = 3 * 32 * 32;
const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_IMAGE_BYTES;

/// An in-memory image set (pixels only; this codec is label-free).
#[derive(Debug, Clone)]
pub struct Dataset {
    data: Vec<u8>,
    shape: [usize; 3],
}

impl Dataset {
    fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        if self.data.is_empty() { 0 } else { self.data.len() / self.image_len() }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Raw bytes of image `i` (channel-major planes).
    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Materialize the given images as a `(batch, c, h, w)` tensor in [0, 1].
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let len = self.image_len();
        let mut v = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!(
                    "image index {i} out of range (dataset has {})",
                    self.len()
                )));
            }
            v.extend(self.image_bytes(i).iter().map(|&b| b as f32 / 255.0));
        }
        let [c, h, w] = self.shape;
        Ok(Tensor::from_vec(v, (indices.len(), c, h, w), &Device::Cpu)?)
    }

    /// The first `count` images as one batch.
    pub fn first_n(&self, count: usize) -> Result<Tensor> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.batch(&idx)
    }

    fn take(&self, indices: &[usize]) -> Dataset {
        let len = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.image_bytes(i));
        }
        Dataset { data, shape: self.shape }
    }

    /// Parse one CIFAR-10 binary batch file (label byte + 3072 image bytes
    /// per record).
    pub fn from_cifar_file(path: &Path) -> Result<Dataset> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Data(format!(
                "{} is not a CIFAR-10 binary batch ({} bytes is not a \
                 multiple of {CIFAR_RECORD_BYTES})",
                path.display(),
                bytes.len()
            )));
        }
        let count = bytes.len() / CIFAR_RECORD_BYTES;
        let mut data = Vec::with_capacity(count * CIFAR_IMAGE_BYTES);
        for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            data.extend_from_slice(&rec[1..]); // skip the label byte
        }
        Ok(Dataset { data, shape: [3, 32, 32] })
    }

    /// Load and concatenate the five CIFAR-10 training batches.
    pub fn cifar_train_pool(dir: &Path) -> Result<Dataset> {
        let mut data = Vec::new();
        for i in 1..=5 {
            let path = dir.join(format!("data_batch_{i}.bin"));
            let batch = Dataset::from_cifar_file(&path)?;
            data.extend_from_slice(&batch.data);
        }
        Ok(Dataset { data, shape: [3, 32, 32] })
    }

    /// Load the CIFAR-10 test batch.
    pub fn cifar_test(dir: &Path) -> Result<Dataset> {
        Dataset::from_cifar_file(&dir.join("test_batch.bin"))
    }

    /// Deterministic synthetic corpus. Every image mixes its own broadband
    /// wave set (frequencies from below one cycle up to near Nyquist), a
    /// linear shading ramp, soft rectangles, and a smoothed per-image noise
    /// texture, so images share no structure beyond their statistics and a
    /// dataset-mean predictor is a poor baseline. Statistically nothing like
    /// photographs, but diverse enough to train and compare codecs on.
    pub fn synthetic(count: usize, shape: [usize; 3], seed: u64) -> Dataset {
        let [c, h, w] = shape;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(count * c * h * w);
        let mut field = vec![0f32; c * h * w];
        let mut noise = vec![0f32; h * w];
        let mut blurred = vec![0f32; h * w];
        for _ in 0..count {
            field.iter_mut().for_each(|v| *v = 0.0);
            // Oriented waves with log-uniform frequencies and mild spectral
            // decay; per-channel phase and gain keep channels related but
            // not identical.
            for _ in 0..6usize {
                let cycles = rng.gen_range((0.4f32).ln()..(14.0f32).ln()).exp();
                let theta = rng.gen_range(0.0..std::f32::consts::TAU);
                let fy = cycles * theta.sin() / h as f32;
                let fx = cycles * theta.cos() / w as f32;
                let amp = rng.gen_range(0.25..1.0) / (1.0 + 0.12 * cycles);
                let phases: Vec<f32> =
                    (0..c).map(|_| rng.gen_range(0.0..std::f32::consts::TAU)).collect();
                let gains: Vec<f32> = (0..c).map(|_| rng.gen_range(0.4..1.0)).collect();
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let t = std::f32::consts::TAU
                                * (fy * y as f32 + fx * x as f32)
                                + phases[ch];
                            field[(ch * h + y) * w + x] += amp * gains[ch] * t.sin();
                        }
                    }
                }
            }
            // A linear shading ramp in a random direction.
            let theta = rng.gen_range(0.0..std::f32::consts::TAU);
            let ramp_amp = rng.gen_range(0.0..0.8);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let u = (y as f32 / h as f32 - 0.5) * theta.sin()
                            + (x as f32 / w as f32 - 0.5) * theta.cos();
                        field[(ch * h + y) * w + x] += ramp_amp * u;
                    }
                }
            }
            // Three rectangles to create edges and occlusion.
            for _ in 0..3 {
                let y0 = rng.gen_range(0..h);
                let x0 = rng.gen_range(0..w);
                let dy = rng.gen_range(h / 8..h / 2);
                let dx = rng.gen_range(w / 8..w / 2);
                let level: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for ch in 0..c {
                    for y in y0..(y0 + dy).min(h) {
                        for x in x0..(x0 + dx).min(w) {
                            field[(ch * h + y) * w + x] += level[ch];
                        }
                    }
                }
            }
            // A box-smoothed noise texture shared across channels with
            // per-channel gain: fine-grained content no global model of the
            // corpus can predict.
            noise.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let radius = rng.gen_range(0..=1i64);
            let tex_amp = rng.gen_range(0.15..0.5);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = 0f32;
                    let mut n = 0f32;
                    for yy in (y - radius).max(0)..=(y + radius).min(h as i64 - 1) {
                        for xx in (x - radius).max(0)..=(x + radius).min(w as i64 - 1) {
                            acc += noise[(yy * w as i64 + xx) as usize];
                            n += 1.0;
                        }
                    }
                    blurred[(y * w as i64 + x) as usize] = acc / n;
                }
            }
            for ch in 0..c {
                let gain = tex_amp * rng.gen_range(0.6..1.0);
                for (i, &t) in blurred.iter().enumerate() {
                    field[ch * h * w + i] += gain * t;
                }
            }
            // Min-max normalize per image, quantize to bytes.
            let (mut lo, mut hi) = (f32::MAX, f32::MIN);
            for &v in &field {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = (hi - lo).max(1e-6);
            data.extend(field.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8));
        }
        Dataset { data, shape }
    }
}

/// Train/validation/test datasets plus a label naming where they came from.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Substrate identifier recorded in logs and result tables.
    pub label: String,
}

/// Environment override for the CIFAR-10 directory.
pub const CIFAR_DIR_ENV: &str = "JSCC_CIFAR_DIR";

/// A seeded permutation of `0..count` (explicit Fisher-Yates so the result
/// is stable across `rand` versions).
pub fn shuffled_indices(count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

fn cifar_dir(cfg: &DataConfig) -> Option<PathBuf> {
    if let Some(path) = &cfg.path {
        return Some(path.clone());
    }
    std::env::var_os(CIFAR_DIR_ENV).map(PathBuf::from)
}

/// Assemble the bundle a config asks for. CIFAR splits draw the training and
/// validation sets from a seeded shuffle of the 50k training pool; the test
/// set is a prefix of the held-out test batch. Synthetic corpora use
/// disjoint seed roles per split.
pub fn load_bundle(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let d = &cfg.data;
    let shape = cfg.model.image;
    match d.source {
        DataSource::Synthetic => Ok(synthetic_bundle(d, shape, cfg.seeds.data)),
        DataSource::CifarBin => {
            let dir = cifar_dir(d).ok_or_else(|| {
                Error::Data(format!(
                    "data.source = cifar-bin but no directory given (set \
                     data.path or {CIFAR_DIR_ENV})"
                ))
            })?;
            if shape != [3, 32, 32] {
                return Err(Error::Data(format!(
                    "CIFAR-10 images are [3, 32, 32]; config wants {shape:?}"
                )));
            }
            let pool = Dataset::cifar_train_pool(&dir)?;
            if d.train + d.val > pool.len() {
                return Err(Error::Data(format!(
                    "train + val = {} exceeds the {}-image training pool",
                    d.train + d.val,
                    pool.len()
                )));
            }
            let order = shuffled_indices(pool.len(), derive_seed(cfg.seeds.data, "split"));
            let train = pool.take(&order[..d.train]);
            let val = pool.take(&order[d.train..d.train + d.val]);
            let test_pool = Dataset::cifar_test(&dir)?;
            if d.test > test_pool.len() {
                return Err(Error::Data(format!(
                    "test = {} exceeds the {}-image test batch",
                    d.test,
                    test_pool.len()
                )));
            }
            let test = test_pool.take(&(0..d.test).collect::<Vec<_>>());
            Ok(DataBundle {
                train,
                val,
                test,
                label: format!(
                    "cifar10[{}]-train{}-val{}-test{}-seed{}",
                    dir.display(),
                    d.train,
                    d.val,
                    d.test,
                    cfg.seeds.data
                ),
            })
        }
    }
}

fn synthetic_bundle(d: &DataConfig, shape: [usize; 3], seed: u64) -> DataBundle {
    DataBundle {
        train: Dataset::synthetic(d.train, shape, derive_seed(seed, "synthetic-train")),
        val: Dataset::synthetic(d.val, shape, derive_seed(seed, "synthetic-val")),
        test: Dataset::synthetic(d.test, shape, derive_seed(seed, "synthetic-test")),
        label: format!(
            "synthetic-train{}-val{}-test{}-seed{seed}",
            d.train, d.val, d.test
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_varied() {
        let a = Dataset::synthetic(4, [3, 32, 32], 9);
        let b = Dataset::synthetic(4, [3, 32, 32], 9);
        assert_eq!(a.data, b.data);
        let c = Dataset::synthetic(4, [3, 32, 32], 10);
        assert_ne!(a.data, c.data);

        // Non-degenerate: each image spans a reasonable dynamic range.
        for i in 0..a.len() {
            let img = a.image_bytes(i);
            let lo = *img.iter().min().unwrap();
            let hi = *img.iter().max().unwrap();
            assert!(hi - lo > 128, "image {i} spans only {lo}..{hi}");
        }
    }

    #[test]
    fn batch_scales_bytes_to_unit_range() {
        let ds = Dataset::synthetic(3, [3, 32, 32], 1);
        let t = ds.batch(&[2, 0]).unwrap();
        assert_eq!(t.dims(), &[2, 3, 32, 32]);
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let direct = ds.image_bytes(2)[0] as f32 / 255.0;
        assert_eq!(v[0], direct);
        assert!(ds.batch(&[3]).is_err());
    }

    #[test]
    fn cifar_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        // Two records: label byte then 3072 pixel bytes.
        let mut bytes = Vec::new();
        for rec in 0..2u8 {
            bytes.push(rec); // label
            bytes.extend((0..CIFAR_IMAGE_BYTES).map(|i| (i as u8).wrapping_add(rec)));
        }
        std::fs::write(&path, &bytes).unwrap();
        let ds = Dataset::from_cifar_file(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_bytes(0)[0], 0);
        assert_eq!(ds.image_bytes(1)[0], 1);
        assert_eq!(ds.image_bytes(0)[CIFAR_IMAGE_BYTES - 1], ((CIFAR_IMAGE_BYTES - 1) as u8));

        // Truncated files are rejected.
        std::fs::write(&path, &bytes[..100]).unwrap();
        assert!(Dataset::from_cifar_file(&path).is_err());
    }

    #[test]
    fn cifar_bundle_splits_are_disjoint_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        // Five tiny "training batches" with distinct first pixels, plus a
        // test batch.
        let mut id = 0u8;
        for f in 1..=5 {
            let mut bytes = Vec::new();
            for _ in 0..4 {
                bytes.push(0);
                let mut img = vec![id; CIFAR_IMAGE_BYTES];
                img[1] = 255 - id;
                bytes.extend(img);
                id += 1;
            }
            std::fs::write(dir.path().join(format!("data_batch_{f}.bin")), &bytes).unwrap();
        }
        let mut bytes = Vec::new();
        for t in 0..6 {
            bytes.push(0);
            bytes.extend(vec![200 + t as u8; CIFAR_IMAGE_BYTES]);
        }
        std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();

        let cfg = ExperimentConfig::from_toml_str(&format!(
            "[grid]\nlevels = 4\nrho_max = 0.25\nmode = \"varying-features\"\n\
             [data]\nsource = \"cifar-bin\"\npath = \"{}\"\ntrain = 12\nval = 8\ntest = 6\n",
            dir.path().display()
        ))
        .unwrap();
        let bundle = load_bundle(&cfg).unwrap();
        assert_eq!(bundle.train.len(), 12);
        assert_eq!(bundle.val.len(), 8);
        assert_eq!(bundle.test.len(), 6);

        // Train and val partition the pool: every id appears exactly once.
        let mut seen = vec![0u32; 20];
        for i in 0..12 {
            seen[bundle.train.image_bytes(i)[0] as usize] += 1;
        }
        for i in 0..8 {
            seen[bundle.val.image_bytes(i)[0] as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1), "{seen:?}");

        // Same seed, same split; the split is drawn from the data seed only.
        let again = load_bundle(&cfg).unwrap();
        assert_eq!(bundle.train.data, again.train.data);

        // Oversized requests are refused.
        let mut big = cfg.clone();
        big.data.train = 30;
        assert!(load_bundle(&big).is_err());
    }

    #[test]
    fn synthetic_bundle_splits_differ() {
        let cfg = ExperimentConfig::from_toml_str(
            "[grid]\nlevels = 4\nrho_max = 0.25\nmode = \"varying-features\"\n\
             [data]\nsource = \"synthetic\"\ntrain = 4\nval = 4\ntest = 4\n",
        )
        .unwrap();
        let bundle = load_bundle(&cfg).unwrap();
        assert_ne!(bundle.train.data, bundle.val.data);
        assert_ne!(bundle.val.data, bundle.test.data);
        assert!(bundle.label.starts_with("synthetic-"));
    }
}
