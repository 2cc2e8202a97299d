//! Analytic ground truths for the 1-D Laplace study: the soft-thresholding
//! proximal and the posterior mean under Gaussian noise, the latter computed
//! by self-validating quadrature.

use lpn_core::error::{LpnError, Result};

/// `sign(x) max(|x| - lambda, 0)`, the proximal operator of `lambda |.|`.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    assert!(lambda > 0.0, "soft_threshold: lambda must be positive");
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// `E[x | y]` for `x ~ Laplace(0, 1)`, `y = x + sigma N(0, 1)`, by composite
/// Simpson quadrature on a symmetric interval. This is the function an
/// l2-trained denoiser converges to.
pub fn laplace_posterior_mean(y: f64, sigma: f64) -> Result<f64> {
    laplace_posterior_mean_with_intervals(y, sigma, 8192)
}

/// Quadrature with an explicit interval count, exposed so callers can verify
/// convergence by halving the step.
pub fn laplace_posterior_mean_with_intervals(y: f64, sigma: f64, intervals: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(LpnError::InvalidConfig(format!(
            "posterior mean needs sigma > 0, got {sigma}"
        )));
    }
    assert!(intervals >= 2 && intervals % 2 == 0, "need an even interval count");
    // Integrand support: Gaussian factor centered at y with width sigma,
    // Laplace factor centered at 0. A symmetric interval keeps the quadrature
    // grid invariant under y -> -y, so antisymmetry holds to round-off.
    let half = y.abs() + 12.0 * sigma + 12.0;
    let n = intervals;
    let h = 2.0 * half / n as f64;
    let log_w = |x: f64| -> f64 {
        let d = (y - x) / sigma;
        -0.5 * d * d - x.abs()
    };
    // Stabilize by the maximum log weight over the grid.
    let mut m = f64::NEG_INFINITY;
    for i in 0..=n {
        m = m.max(log_w(-half + i as f64 * h));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=n {
        let x = -half + i as f64 * h;
        let w = (log_w(x) - m).exp();
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += c * x * w;
        den += c * w;
    }
    if den <= 0.0 || !num.is_finite() || !den.is_finite() {
        return Err(LpnError::InvalidConfig(format!(
            "quadrature failure at y = {y}, sigma = {sigma}"
        )));
    }
    Ok(num / den)
}
