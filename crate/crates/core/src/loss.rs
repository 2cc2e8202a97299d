//! Denoising loss functions: squared l2, l1, and the annealed matching loss
//! applied to the residual norm.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result};

/// Whether the matching loss carries the Gaussian normalizing constant.
///
/// The two forms differ by a positive scaling of the exponential term, so they
/// share minimizers; the normalized constant `(pi g^2)^{-n/2}` overflows for
/// small `g` and large `n`, which is why `Unnormalized` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    Normalized,
    #[default]
    Unnormalized,
}

/// Loss applied to the denoising residual `f(y) - x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `0.5 * ||f(y) - x||_2^2`
    L2,
    /// `||f(y) - x||_1`
    L1,
    /// `m_gamma(||f(y) - x||_2)`
    Pm { gamma: f64, form: LossForm },
}

impl LossKind {
    pub fn pm(gamma: f64) -> Self {
        LossKind::Pm {
            gamma,
            form: LossForm::Unnormalized,
        }
    }
}

/// Matching loss `m_gamma` evaluated at a residual norm.
///
/// Unnormalized: `1 - exp(-x^2 / g^2)`. Normalized: `1 - (pi g^2)^{-dim/2}
/// exp(-x^2 / g^2)`. Strictly increasing on `[0, inf)` for every `gamma > 0`.
pub fn loss_pm(residual_norm: f64, gamma: f64, dim: usize, form: LossForm) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(LpnError::InvalidConfig(format!(
            "matching loss requires gamma > 0, got {gamma}"
        )));
    }
    let e = (-residual_norm * residual_norm / (gamma * gamma)).exp();
    Ok(match form {
        LossForm::Unnormalized => 1.0 - e,
        LossForm::Normalized => 1.0 - pm_norm_const(gamma, dim) * e,
    })
}

/// `(pi g^2)^{-dim/2}`, computed in log space.
fn pm_norm_const(gamma: f64, dim: usize) -> f64 {
    (-(dim as f64) / 2.0 * (std::f64::consts::PI * gamma * gamma).ln()).exp()
}

/// `0.5 * ||f_out - x||_2^2`
pub fn loss_l2(f_out: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_dims(f_out, x)?;
    Ok(0.5 * (f_out - x).norm_squared())
}

/// `||f_out - x||_1`
pub fn loss_l1(f_out: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_dims(f_out, x)?;
    Ok(f_out.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).sum())
}

fn check_dims(f_out: &DVector<f64>, x: &DVector<f64>) -> Result<()> {
    if f_out.len() != x.len() {
        return Err(LpnError::DimensionMismatch {
            context: "loss",
            expected: x.len(),
            got: f_out.len(),
        });
    }
    Ok(())
}

/// Loss value together with its gradient with respect to `f_out`.
///
/// The gradient seeds the network's parameter backward pass; it is evaluated
/// at the current output and treated as a constant there.
pub fn loss_value_and_output_grad(
    kind: LossKind,
    f_out: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    check_dims(f_out, x)?;
    let diff = f_out - x;
    match kind {
        LossKind::L2 => {
            let value = 0.5 * diff.norm_squared();
            Ok((value, diff))
        }
        LossKind::L1 => {
            let value = diff.iter().map(|d| d.abs()).sum();
            let grad = diff.map(|d| {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            Ok((value, grad))
        }
        LossKind::Pm { gamma, form } => {
            if gamma <= 0.0 {
                return Err(LpnError::InvalidConfig(format!(
                    "matching loss requires gamma > 0, got {gamma}"
                )));
            }
            let c = match form {
                LossForm::Unnormalized => 1.0,
                LossForm::Normalized => pm_norm_const(gamma, x.len()),
            };
            let g2 = gamma * gamma;
            let e = (-diff.norm_squared() / g2).exp();
            let value = 1.0 - c * e;
            let grad = diff * (2.0 * c * e / g2);
            Ok((value, grad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pm_unnormalized_at_zero_is_zero() {
        assert_eq!(
            loss_pm(0.0, 0.7, 1, LossForm::Unnormalized).unwrap(),
            0.0
        );
    }

    #[test]
    fn pm_unnormalized_gamma_one_residual_one() {
        let v = loss_pm(1.0, 1.0, 1, LossForm::Unnormalized).unwrap();
        assert_relative_eq!(v, 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.632121, epsilon = 1e-6);
    }

    #[test]
    fn pm_normalized_gamma_one_dim_two_residual_zero() {
        let v = loss_pm(0.0, 1.0, 2, LossForm::Normalized).unwrap();
        assert_relative_eq!(v, 1.0 - 1.0 / std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(v, 0.681690, epsilon = 1e-6);
    }

    #[test]
    fn pm_rejects_nonpositive_gamma() {
        assert!(loss_pm(1.0, 0.0, 1, LossForm::Unnormalized).is_err());
        assert!(loss_pm(1.0, -0.3, 1, LossForm::Unnormalized).is_err());
    }

    #[test]
    fn pm_strictly_increasing_in_residual() {
        // Strict on the range where the exponential is representable; past
        // ~6 gamma the loss saturates to 1 in double precision.
        for &form in &[LossForm::Unnormalized, LossForm::Normalized] {
            for &gamma in &[0.1, 0.5, 1.0, 3.0] {
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=200 {
                    let r = gamma * 4.0 * i as f64 / 200.0;
                    let v = loss_pm(r, gamma, 3, form).unwrap();
                    assert!(v > prev, "m_gamma not increasing at r={r}, gamma={gamma}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn pm_saturates_to_one() {
        let v = loss_pm(1e3, 1.0, 1, LossForm::Unnormalized).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn l2_l1_hand_values() {
        let f = DVector::from_vec(vec![3.0, -4.0]);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert_relative_eq!(loss_l2(&f, &x).unwrap(), 12.5, epsilon = 1e-15);
        assert_relative_eq!(loss_l1(&f, &x).unwrap(), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn losses_zero_at_perfect_output() {
        let x = DVector::from_vec(vec![0.3, -1.2, 5.0]);
        assert_eq!(loss_l2(&x, &x).unwrap(), 0.0);
        assert_eq!(loss_l1(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn l1_permutation_invariant() {
        let f = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = DVector::from_vec(vec![0.2, 0.1, -0.7]);
        let fp = DVector::from_vec(vec![-2.0, 0.5, 1.0]);
        let xp = DVector::from_vec(vec![0.1, -0.7, 0.2]);
        assert_relative_eq!(
            loss_l1(&f, &x).unwrap(),
            loss_l1(&fp, &xp).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = DVector::from_vec(vec![1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0]);
        assert!(loss_l2(&f, &x).is_err());
        assert!(loss_l1(&f, &x).is_err());
    }

    /// The two matching-loss forms differ by an affine map of the exponential
    /// term, so on a one-parameter family of outputs they share the argmin.
    #[test]
    fn pm_forms_share_minimizer() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let gamma = 0.7;
        let argmin = |form: LossForm| -> f64 {
            let mut best = (f64::INFINITY, f64::NAN);
            for i in 0..=600 {
                let t = -3.0 + 0.01 * i as f64;
                let f = &x * t;
                let v = loss_pm((f - &x).norm(), gamma, 2, form).unwrap();
                if v < best.0 {
                    best = (v, t);
                }
            }
            best.1
        };
        assert_eq!(argmin(LossForm::Unnormalized), argmin(LossForm::Normalized));
        assert_relative_eq!(argmin(LossForm::Unnormalized), 1.0, epsilon = 1e-9);
    }
}
