//! Inverting the gradient map and evaluating the implicit regularizer.
//!
//! For a network `f = grad psi + alpha y` with `alpha > 0`, `f` is a
//! bijection; the regularizer it is the proximal operator of can be
//! evaluated at any point `x` by finding `y` with `f(y) = x` and applying
//!
//! ```text
//! R(x) = <y, x> - 0.5 ||x||^2 - (psi(y) + alpha/2 ||y||^2)
//! ```
//!
//! The potential in this formula includes the strong-convexity quadratic;
//! with that convention the identity proximal (zero weights, `alpha = 1`)
//! recovers `R = 0` exactly.

use nalgebra::DVector;

use crate::error::Result;
use crate::icnn::{directional_derivative, lpn_forward, psi, IcnnArch, IcnnParams};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Outcome of an inversion attempt. `converged` means the residual
/// `||f(y_hat) - x||` reached the requested tolerance.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub y_hat: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Evaluated regularizer value together with the inversion diagnostics.
#[derive(Debug, Clone)]
pub struct PriorEval {
    pub value: f64,
    pub inversion: InversionResult,
}

/// Invert `f` at `x` by minimizing the strongly convex objective
/// `psi(y; alpha) - <x, y>` whose gradient is exactly `f(y) - x`.
///
/// Nonlinear conjugate gradient (Polak-Ribiere with restarts) with a
/// backtracking line search; the stopping rule is the contract itself,
/// `||f(y) - x|| <= tol`.
pub fn invert_convex(
    params: &IcnnParams,
    arch: &IcnnArch,
    x: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<InversionResult> {
    invert_convex_from(params, arch, x, x.clone(), tol, max_iters)
}

/// Same as [`invert_convex`] with an explicit starting point (used to warm
/// start sweeps over nearby targets).
pub fn invert_convex_from(
    params: &IcnnParams,
    arch: &IcnnArch,
    x: &DVector<f64>,
    y0: DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<InversionResult> {
    let grad = |y: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(lpn_forward(params, arch, y)? - x)
    };
    let mut y = y0;
    let mut g = grad(&y)?;
    let mut d = -&g;
    let mut step = 1.0;
    let mut iterations = 0;

    while iterations < max_iters {
        let gnorm = g.norm();
        if gnorm <= tol {
            return Ok(InversionResult {
                y_hat: y,
                residual: gnorm,
                iterations,
                converged: true,
            });
        }
        iterations += 1;

        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            // Not a descent direction; restart with steepest descent.
            d = -&g;
            slope = -gnorm * gnorm;
        }

        match line_search_directional(&grad, &y, &d, slope, step)? {
            Some((t, y_new, g_new)) => {
                step = t;
                y = y_new;
                // Polak-Ribiere with restart.
                let beta = (g_new.dot(&(&g_new - &g)) / (gnorm * gnorm)).max(0.0);
                d = &d * beta - &g_new;
                g = g_new;
            }
            None => break, // no progress representable in double precision
        }
    }

    let residual = g.norm();
    Ok(InversionResult {
        converged: residual <= tol,
        y_hat: y,
        residual,
        iterations,
    })
}

/// Line search driven by the directional derivative `phi'(t) = <g(y + t d), d>`
/// rather than objective values, which lose all precision near the optimum.
/// The objective is convex along any ray, so `phi'` is nondecreasing and a
/// bracketed secant iteration on its root is reliable. Returns the accepted
/// step with the gradient already evaluated there.
fn line_search_directional(
    grad: &impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    y: &DVector<f64>,
    d: &DVector<f64>,
    slope0: f64,
    step_init: f64,
) -> Result<Option<(f64, DVector<f64>, DVector<f64>)>> {
    const CURVATURE: f64 = 0.1;
    let mut lo = 0.0f64;
    let mut lo_phi = slope0;
    let mut hi: Option<(f64, f64)> = None;
    let mut t = step_init.max(1e-300);
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64)> = None;

    for _ in 0..60 {
        let y_t = y + d * t;
        let g_t = grad(&y_t)?;
        let phi_t = g_t.dot(d);
        if best
            .as_ref()
            .map(|(_, _, _, p)| phi_t.abs() < p.abs())
            .unwrap_or(true)
        {
            best = Some((t, y_t, g_t, phi_t));
        }
        if phi_t.abs() <= CURVATURE * slope0.abs() {
            break;
        }
        if phi_t > 0.0 {
            hi = Some((t, phi_t));
        } else {
            lo = t;
            lo_phi = phi_t;
        }
        t = match hi {
            None => t * 4.0,
            Some((b, phi_b)) => {
                if b - lo <= 1e-12 * b.max(1.0) {
                    break;
                }
                let ts = b - phi_b * (b - lo) / (phi_b - lo_phi);
                let margin = 0.05 * (b - lo);
                if ts.is_finite() {
                    ts.clamp(lo + margin, b - margin)
                } else {
                    0.5 * (lo + b)
                }
            }
        };
        if !t.is_finite() || t > 1e18 {
            break;
        }
    }
    Ok(best.map(|(t, y_t, g_t, _)| (t, y_t, g_t)))
}

/// Invert `f` at `x` by gradient descent on the squared residual
/// `0.5 ||f(y) - x||^2`, using exact Jacobian-vector products (the Jacobian
/// is symmetric, so `J' r = J r`). No global guarantee for `alpha = 0`; the
/// achieved residual is always reported.
pub fn invert_nonconvex(
    params: &IcnnParams,
    arch: &IcnnArch,
    x: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<InversionResult> {
    // grad 0.5||f(y) - x||^2 = J(y)' (f(y) - x) = J(y) (f(y) - x).
    let grad = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let r = lpn_forward(params, arch, y)? - x;
        directional_derivative(params, arch, y, &r)
    };
    let residual_norm = |y: &DVector<f64>| -> Result<f64> {
        Ok((lpn_forward(params, arch, y)? - x).norm())
    };

    let mut y = x.clone();
    let mut g = grad(&y)?;
    let mut step = 1.0;
    let mut iterations = 0;

    while iterations < max_iters {
        let res = residual_norm(&y)?;
        if res <= tol {
            return Ok(InversionResult {
                y_hat: y,
                residual: res,
                iterations,
                converged: true,
            });
        }
        iterations += 1;

        let d = -&g;
        let slope = -g.norm_squared();
        if slope == 0.0 {
            break;
        }
        match line_search_directional(&grad, &y, &d, slope, step)? {
            Some((t, y_new, g_new)) => {
                step = t;
                y = y_new;
                g = g_new;
            }
            None => break,
        }
    }

    let residual = residual_norm(&y)?;
    Ok(InversionResult {
        converged: residual <= tol,
        y_hat: y,
        residual,
        iterations,
    })
}

/// Evaluate the regularizer at `x` via convex inversion.
pub fn eval_prior(
    params: &IcnnParams,
    arch: &IcnnArch,
    x: &DVector<f64>,
    tol: f64,
) -> Result<PriorEval> {
    let inversion = invert_convex(params, arch, x, tol, DEFAULT_MAX_ITERS)?;
    prior_from_inversion(params, arch, x, inversion)
}

/// Regularizer value from an already-computed inversion.
pub fn prior_from_inversion(
    params: &IcnnParams,
    arch: &IcnnArch,
    x: &DVector<f64>,
    inversion: InversionResult,
) -> Result<PriorEval> {
    let y_hat = &inversion.y_hat;
    let value = y_hat.dot(x) - 0.5 * x.norm_squared() - psi(params, arch, y_hat)?;
    Ok(PriorEval { value, inversion })
}

/// Regularizer curve over a list of points, offset-normalized so the minimum
/// over the list is exactly zero. Points failing inversion keep their
/// diagnostics in `evals`.
#[derive(Debug, Clone)]
pub struct PriorCurve {
    /// `R(x_i) - min_j R(x_j)`.
    pub normalized: Vec<f64>,
    pub evals: Vec<PriorEval>,
}

impl PriorCurve {
    pub fn all_converged(&self) -> bool {
        self.evals.iter().all(|e| e.inversion.converged)
    }
}

pub fn eval_prior_curve(
    params: &IcnnParams,
    arch: &IcnnArch,
    xs: &[DVector<f64>],
    tol: f64,
) -> Result<PriorCurve> {
    assert!(!xs.is_empty(), "eval_prior_curve needs at least one point");
    let mut evals = Vec::with_capacity(xs.len());
    let mut warm: Option<DVector<f64>> = None;
    for x in xs {
        let start = warm.take().unwrap_or_else(|| x.clone());
        let inversion = invert_convex_from(params, arch, x, start, tol, DEFAULT_MAX_ITERS)?;
        warm = Some(inversion.y_hat.clone());
        evals.push(prior_from_inversion(params, arch, x, inversion)?);
    }
    let min = evals
        .iter()
        .map(|e| e.value)
        .fold(f64::INFINITY, f64::min);
    let normalized = evals.iter().map(|e| e.value - min).collect();
    Ok(PriorCurve { normalized, evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::{init_params, InitScheme};
    use approx::assert_relative_eq;

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn zero_network_convex_inversion_is_linear_solve() {
        let arch = IcnnArch::new(1, vec![2], 0.5, 10.0).unwrap();
        let params = IcnnParams::zeros(&arch);
        let res = invert_convex(&params, &arch, &vec1(1.0), 1e-10, 1000).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.y_hat[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn zero_network_nonconvex_inversion_alpha_one() {
        let arch = IcnnArch::new(3, vec![2], 1.0, 10.0).unwrap();
        let params = IcnnParams::zeros(&arch);
        let x = DVector::from_vec(vec![0.3, -0.7, 2.0]);
        let res = invert_nonconvex(&params, &arch, &x, 1e-12, 1000).unwrap();
        assert!(res.converged);
        assert_relative_eq!((res.y_hat - &x).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn trained_like_roundtrip_within_strong_monotonicity_bound() {
        let arch = IcnnArch::new(2, vec![8, 8], 0.2, 10.0).unwrap();
        let params = init_params(&arch, 21, InitScheme::ExpGaussian);
        let tol = 1e-9;
        for seed in 0..5u64 {
            let y0 = DVector::from_fn(2, |i, _| ((seed as f64) * 0.7 + i as f64).sin());
            let x = lpn_forward(&params, &arch, &y0).unwrap();
            let res = invert_convex(&params, &arch, &x, tol, 10_000).unwrap();
            assert!(res.converged, "seed {seed} failed: residual {}", res.residual);
            assert!(
                (res.y_hat - &y0).norm() <= 10.0 * tol / arch.alpha,
                "roundtrip error too large"
            );
        }
    }

    #[test]
    fn convex_and_nonconvex_agree() {
        let arch = IcnnArch::new(1, vec![6, 6], 0.3, 10.0).unwrap();
        let params = init_params(&arch, 33, InitScheme::ExpGaussian);
        let x = vec1(0.4);
        let a = invert_convex(&params, &arch, &x, 1e-10, 10_000).unwrap();
        let b = invert_nonconvex(&params, &arch, &x, 1e-10, 10_000).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.y_hat - b.y_hat).norm() <= 1e-6);
    }

    #[test]
    fn identity_prox_prior_is_zero() {
        let arch = IcnnArch::new(2, vec![3], 1.0, 10.0).unwrap();
        let params = IcnnParams::zeros(&arch);
        for s in 0..10 {
            let x = DVector::from_fn(2, |i, _| (s as f64 * 1.3 + i as f64).cos() * 2.0);
            let eval = eval_prior(&params, &arch, &x, 1e-12).unwrap();
            assert!(eval.inversion.converged);
            assert!(eval.value.abs() <= 1e-10, "R(x) = {} != 0", eval.value);
        }
    }

    #[test]
    fn zero_network_prior_is_scaled_quadratic() {
        // f(y) = alpha y, y_hat = x / alpha, and
        // R(x) = (1/(2 alpha) - 1/2) ||x||^2; alpha = 0.5 gives 0.5 ||x||^2.
        let arch = IcnnArch::new(2, vec![3], 0.5, 10.0).unwrap();
        let params = IcnnParams::zeros(&arch);
        let x = DVector::from_vec(vec![1.2, -0.4]);
        let eval = eval_prior(&params, &arch, &x, 1e-12).unwrap();
        assert!(eval.inversion.converged);
        assert_relative_eq!(eval.value, 0.5 * x.norm_squared(), epsilon = 1e-8);
    }

    #[test]
    fn curve_identity_prox_all_zeros_and_min_exactly_zero() {
        let arch = IcnnArch::new(1, vec![3], 1.0, 10.0).unwrap();
        let params = IcnnParams::zeros(&arch);
        let xs: Vec<_> = (0..7).map(|i| vec1(-3.0 + i as f64)).collect();
        let curve = eval_prior_curve(&params, &arch, &xs, 1e-12).unwrap();
        assert!(curve.all_converged());
        assert_eq!(curve.normalized.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        for v in &curve.normalized {
            assert!(v.abs() <= 1e-10);
        }
    }

    #[test]
    fn offset_invariance_of_differences() {
        let arch = IcnnArch::new(1, vec![5, 5], 0.4, 10.0).unwrap();
        let params = init_params(&arch, 8, InitScheme::ExpGaussian);
        let xs: Vec<_> = (0..5).map(|i| vec1(-1.0 + 0.5 * i as f64)).collect();
        let curve = eval_prior_curve(&params, &arch, &xs, 1e-10).unwrap();
        let raw: Vec<f64> = curve.evals.iter().map(|e| e.value).collect();
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                assert_relative_eq!(
                    raw[i] - raw[j],
                    curve.normalized[i] - curve.normalized[j],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn far_outside_training_range_reports_honestly() {
        let arch = IcnnArch::new(1, vec![4], 0.2, 10.0).unwrap();
        let params = init_params(&arch, 2, InitScheme::ExpGaussian);
        let res = invert_nonconvex(&params, &arch, &vec1(100.0), 1e-10, 50).unwrap();
        // Either it converged or it says it did not; the flag must match the
        // reported residual.
        assert_eq!(res.converged, res.residual <= 1e-10);
        let re_eval = (lpn_forward(&params, &arch, &res.y_hat).unwrap() - vec1(100.0)).norm();
        assert_relative_eq!(re_eval, res.residual, max_relative = 1e-9, epsilon = 1e-12);
    }
}
