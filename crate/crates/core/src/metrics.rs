//! Reconstruction-quality metrics.
//!
//! PSNR follows the 8-bit convention `10 * log10(255^2 / mse)` with the MSE
//! computed on the 0-255 pixel scale. Callers hold tensors on the network's
//! [0, 1] scale; [`psnr`] and [`batch_psnr`] rescale internally so every PSNR
//! in logs, tables, and the weight policy means the same thing.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Peak signal value of 8-bit images.
pub const PEAK: f64 = 255.0;

/// PSNR together with the MSE it was computed from (0-255 scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrResult {
    /// `f64::INFINITY` for a perfect reconstruction.
    pub psnr_db: f64,
    pub mse: f64,
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "metric operands differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared error over all coordinates, as a graph node (same scale as
/// the inputs). Used as the training loss.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Mean squared error over all coordinates, as a scalar (same scale as the
/// inputs).
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(mse_loss(a, b)?.to_dtype(candle_core::DType::F64)?.to_scalar()?)
}

fn psnr_from_mse(mse_255: f64) -> PsnrResult {
    let psnr_db = if mse_255 == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse_255).log10()
    };
    PsnrResult { psnr_db, mse: mse_255 }
}

/// PSNR between two tensors on the [0, 1] scale (any matching shape).
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<PsnrResult> {
    let m = mse(a, b)? * PEAK * PEAK;
    Ok(psnr_from_mse(m))
}

/// Per-image PSNRs for batched tensors of shape `(batch, ...)` on the [0, 1]
/// scale.
pub fn batch_psnr(a: &Tensor, b: &Tensor) -> Result<Vec<PsnrResult>> {
    check_same_shape(a, b)?;
    let batch = a.dim(0)?;
    let per_image = (a - b)?
        .sqr()?
        .reshape((batch, ()))?
        .mean(1)?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1::<f64>()?;
    Ok(per_image
        .into_iter()
        .map(|m| psnr_from_mse(m * PEAK * PEAK))
        .collect())
}

/// Mean of per-image PSNRs — the aggregation used in every reported table.
pub fn mean_psnr(results: &[PsnrResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    results.iter().map(|r| r.psnr_db).sum::<f64>() / results.len() as f64
}

/// Sample standard deviation of per-image PSNRs.
pub fn std_psnr(results: &[PsnrResult]) -> f64 {
    if results.len() < 2 {
        return 0.0;
    }
    let mean = mean_psnr(results);
    let var = results
        .iter()
        .map(|r| (r.psnr_db - mean).powi(2))
        .sum::<f64>()
        / (results.len() - 1) as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(values: &[f32], shape: (usize, usize)) -> Tensor {
        Tensor::from_slice(values, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn mse_matches_naive_loop() {
        let a = [0.1f32, 0.5, 0.9, 0.0, 0.25, 1.0];
        let b = [0.2f32, 0.5, 0.4, 0.1, 0.75, 0.3];
        let naive = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        let m = mse(&t(&a, (2, 3)), &t(&b, (2, 3))).unwrap();
        // f32 accumulation inside the graph vs f64 in the oracle.
        assert!((m - naive).abs() < 1e-6, "{m} vs {naive}");
    }

    #[test]
    fn psnr_ten_db_exact_case() {
        // mse = 255^2 / 10 on the 0-255 scale gives exactly 10 dB.
        let delta = (PEAK * PEAK / 10.0).sqrt() / PEAK;
        let a = Tensor::zeros((4, 8), DType::F64, &Device::Cpu).unwrap();
        let b = (&a + delta).unwrap();
        let r = psnr(&a, &b).unwrap();
        assert!((r.psnr_db - 10.0).abs() < 1e-9, "{}", r.psnr_db);
    }

    #[test]
    fn perfect_reconstruction_is_infinite() {
        let a = t(&[0.3, 0.6, 0.9, 0.1], (1, 4));
        let r = psnr(&a, &a).unwrap();
        assert!(r.psnr_db.is_infinite() && r.psnr_db > 0.0);
        assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = t(&[0.0; 4], (1, 4));
        let b = t(&[0.0; 6], (2, 3));
        assert!(psnr(&a, &b).is_err());
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn batch_psnr_is_per_image() {
        // Image 0 reconstructed perfectly, image 1 with a known error.
        let a = t(&[0.5, 0.5, 0.5, 0.5], (2, 2));
        let b = t(&[0.5, 0.5, 0.7, 0.7], (2, 2));
        let rs = batch_psnr(&a, &b).unwrap();
        assert!(rs[0].psnr_db.is_infinite());
        let expected = 10.0 * (PEAK * PEAK / (0.2f64 * 0.2 * PEAK * PEAK)).log10();
        assert!((rs[1].psnr_db - expected).abs() < 1e-4, "{:?}", rs[1]);
        // Mean-of-per-image differs from pooled-mse PSNR; pin the former.
        assert!(mean_psnr(&rs).is_infinite());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = t(&[0.0; 16], (4, 4));
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.05, 0.2, 0.5] {
            let b = t(&[amp; 16], (4, 4));
            let r = psnr(&a, &b).unwrap();
            assert!(r.psnr_db < last);
            last = r.psnr_db;
        }
    }
}
