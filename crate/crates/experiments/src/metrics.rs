//! Reconstruction metrics.

use nalgebra::DVector;
use serde::Serialize;

/// PSNR is capped here: identical inputs would give +inf.
pub const PSNR_CAP_DB: f64 = 300.0;

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &DVector<f64>, x_hat: &DVector<f64>, peak: f64) -> f64 {
    assert_eq!(x.len(), x_hat.len(), "psnr: dimension mismatch");
    assert!(peak > 0.0, "psnr: peak must be positive");
    let m = mse(x, x_hat);
    if m == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB)
}

pub fn mse(x: &DVector<f64>, x_hat: &DVector<f64>) -> f64 {
    assert_eq!(x.len(), x_hat.len(), "mse: dimension mismatch");
    (x - x_hat).norm_squared() / x.len() as f64
}

pub fn sup_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sup_error: length mismatch");
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0f64, f64::max)
}

pub fn mean_abs_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mean_abs_error: length mismatch");
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64
}

/// PSNR/MSE pair reported by the inverse-problem harness; the peak is always
/// stated alongside.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub mse: f64,
    pub peak: f64,
}

impl MetricReport {
    pub fn new(x: &DVector<f64>, x_hat: &DVector<f64>, peak: f64) -> Self {
        MetricReport {
            psnr_db: psnr(x, x_hat, peak),
            mse: mse(x, x_hat),
            peak,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_inputs_hit_the_cap() {
        let x = DVector::from_vec(vec![0.1, 0.5, 0.9]);
        assert_eq!(psnr(&x, &x, 1.0), PSNR_CAP_DB);
    }

    #[test]
    fn uniform_error_of_tenth_on_unit_peak_is_twenty_db() {
        let x = DVector::from_vec(vec![0.5; 8]);
        let y = DVector::from_vec(vec![0.6; 8]);
        assert_relative_eq!(psnr(&x, &y, 1.0), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_consistent_with_declared_formula() {
        let x = DVector::from_vec(vec![0.2, 0.4, 0.8, 1.0]);
        let y = DVector::from_vec(vec![0.25, 0.35, 0.85, 0.9]);
        let m = mse(&x, &y);
        assert_relative_eq!(psnr(&x, &y, 1.0), 10.0 * (1.0 / m).log10(), epsilon = 1e-12);
    }

    #[test]
    fn noise_lowers_psnr() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = DVector::from_fn(64, |i, _| (i as f64 / 63.0).sin().abs());
        let small = DVector::from_fn(64, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            0.01 * g
        });
        let big = &small * 10.0;
        let p_small = psnr(&x, &(&x + small), 1.0);
        let p_big = psnr(&x, &(&x + big), 1.0);
        assert!(p_big < p_small);
    }
}
