//! Power normalization and the complex AWGN channel.
//!
//! Codewords are real vectors of even length `2k` read as `k` complex
//! symbols: adjacent pairs `(re, im)` along the last axis. The transmit power
//! constraint is *mean unit power per complex symbol*,
//! `(1/k) * sum_i |z_i|^2 = 1`, and the channel adds circularly symmetric
//! complex Gaussian noise of variance `sigma^2 = 10^(-snr_db/10)`
//! (`sigma^2/2` per real coordinate), so the receive SNR is exactly
//! `1/sigma^2`.
//!
//! Tensor entry points keep everything inside the autodiff graph (gradients
//! flow through the normalization scale); `_slice` variants serve the C ABI
//! and double as independent cross-checks in tests.

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Noise variance `sigma^2 = 10^(-snr_db/10)` for unit signal power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Codeword rows normalized to unit mean complex-symbol power, ready for the
/// channel. Holds a `(batch, 2k)` tensor.
#[derive(Debug, Clone)]
pub struct ChannelSymbols {
    data: Tensor,
}

impl ChannelSymbols {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// Complex symbols per batch row.
    pub fn symbols_per_row(&self) -> usize {
        self.data.dims()[1] / 2
    }
}

fn check_rows(z: &Tensor) -> Result<(usize, usize)> {
    let dims = z.dims();
    if dims.len() != 2 {
        return Err(Error::Shape(format!(
            "channel input must be (batch, reals), got {dims:?}"
        )));
    }
    if dims[1] == 0 || dims[1] % 2 != 0 {
        return Err(Error::Shape(format!(
            "channel input length {} must be even and nonzero (re/im pairs)",
            dims[1]
        )));
    }
    Ok((dims[0], dims[1]))
}

/// Normalize each row of `z` (shape `(batch, 2k)`) to unit mean
/// complex-symbol power. Gradients flow through the scale.
pub fn normalize_power(z: &Tensor) -> Result<ChannelSymbols> {
    normalize_power_blocks(z, 1)
}

/// Normalize each of `blocks` equal-length contiguous blocks of each row
/// independently, so any prefix of whole blocks also satisfies the power
/// constraint (successive refinement).
pub fn normalize_power_blocks(z: &Tensor, blocks: usize) -> Result<ChannelSymbols> {
    let (batch, len) = check_rows(z)?;
    if blocks == 0 || len % blocks != 0 {
        return Err(Error::Shape(format!(
            "row length {len} does not split into {blocks} equal blocks"
        )));
    }
    let block_len = len / blocks;
    if block_len % 2 != 0 {
        return Err(Error::Shape(format!(
            "block length {block_len} must be even (re/im pairs)"
        )));
    }
    let k = (block_len / 2) as f64;
    let grouped = z.reshape((batch, blocks, block_len))?;
    let sumsq = grouped.sqr()?.sum_keepdim(2)?; // (batch, blocks, 1)
    for (b, row) in sumsq
        .reshape((batch, blocks))?
        .to_dtype(candle_core::DType::F64)?
        .to_vec2::<f64>()?
        .iter()
        .enumerate()
    {
        if let Some(i) = row.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Channel(format!(
                "cannot normalize block {i} of row {b}: power sum is {}",
                row[i]
            )));
        }
    }
    // scale = sqrt(k / sum|z|^2), applied per block.
    let scale = (sumsq * (1.0 / k))?.powf(-0.5)?;
    let data = grouped
        .broadcast_mul(&scale)?
        .reshape((batch, len))?;
    Ok(ChannelSymbols { data })
}

/// Seeded complex AWGN source at a fixed SNR.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    snr_db: f64,
    sigma2: f64,
    rng: ChaCha12Rng,
}

impl NoiseModel {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        NoiseModel {
            snr_db,
            sigma2: noise_variance(snr_db),
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    /// Complex noise variance `sigma^2`.
    pub fn variance(&self) -> f64 {
        self.sigma2
    }

    /// Draw `count` real noise coordinates (variance `sigma^2 / 2` each).
    /// Consecutive calls continue one deterministic stream.
    pub fn draw(&mut self, count: usize) -> Vec<f32> {
        let normal = Normal::new(0.0f64, (self.sigma2 / 2.0).sqrt()).expect("valid sigma");
        (0..count).map(|_| normal.sample(&mut self.rng) as f32).collect()
    }
}

/// Pass normalized symbols through the AWGN channel: `y = z + w`. The noise
/// enters the graph as a constant, so gradients reach `z` untouched.
pub fn transmit_awgn(z: &ChannelSymbols, noise: &mut NoiseModel) -> Result<Tensor> {
    let dims = z.data.dims();
    let w = noise.draw(dims[0] * dims[1]);
    let w = Tensor::from_vec(w, (dims[0], dims[1]), z.data.device())?;
    Ok((&z.data + &w)?)
}

/// Slice-based normalization (single block): independent of the tensor path.
pub fn normalize_power_slice(buf: &mut [f32]) -> Result<()> {
    normalize_power_blocks_slice(buf, 1)
}

/// Slice-based per-block normalization.
pub fn normalize_power_blocks_slice(buf: &mut [f32], blocks: usize) -> Result<()> {
    if buf.is_empty() || blocks == 0 || buf.len() % blocks != 0 {
        return Err(Error::Shape(format!(
            "buffer of {} reals does not split into {blocks} equal blocks",
            buf.len()
        )));
    }
    let block_len = buf.len() / blocks;
    if block_len % 2 != 0 {
        return Err(Error::Shape(format!(
            "block length {block_len} must be even (re/im pairs)"
        )));
    }
    let k = (block_len / 2) as f64;
    for block in buf.chunks_mut(block_len) {
        let sumsq: f64 = block.iter().map(|&x| (x as f64) * (x as f64)).sum();
        if sumsq <= 0.0 || !sumsq.is_finite() {
            return Err(Error::Channel(format!(
                "cannot normalize block: power sum is {sumsq}"
            )));
        }
        let scale = (k / sumsq).sqrt();
        for x in block.iter_mut() {
            *x = (*x as f64 * scale) as f32;
        }
    }
    Ok(())
}

/// Slice-based AWGN at `snr_db` with a one-shot seed (C ABI entry point).
pub fn awgn_slice(buf: &mut [f32], snr_db: f64, seed: u64) -> Result<()> {
    if buf.len() % 2 != 0 {
        return Err(Error::shape("AWGN buffer length must be even (re/im pairs)"));
    }
    let mut noise = NoiseModel::new(snr_db, seed);
    let w = noise.draw(buf.len());
    for (x, w) in buf.iter_mut().zip(w) {
        *x += w;
    }
    Ok(())
}
