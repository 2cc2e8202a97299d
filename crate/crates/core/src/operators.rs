//! Linear measurement operators with adjoints, operator-norm estimation by
//! power iteration, and a conjugate-gradient solver for symmetric
//! positive-definite systems.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result};

/// Serializable description of an operator; build one with
/// [`OperatorSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity { dim: usize },
    /// 1-D convolution with an odd-length stencil, reflect boundary.
    Blur { kernel: Vec<f64>, dim: usize },
    /// Separable 2-D blur: the same odd stencil along rows then columns of an
    /// image stored row-major in the flattened vector.
    Blur2d {
        kernel: Vec<f64>,
        height: usize,
        width: usize,
    },
    /// Dense Gaussian measurement matrix with i.i.d. N(0, 1/m) entries.
    GaussianCs { rows: usize, cols: usize, seed: u64 },
    /// Coordinate subsampling.
    Mask { keep: Vec<usize>, input_dim: usize },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<LinearOperator> {
        match self {
            OperatorSpec::Identity { dim } => {
                if *dim == 0 {
                    return Err(LpnError::InvalidConfig("identity dim must be >= 1".into()));
                }
                Ok(LinearOperator::Identity { dim: *dim })
            }
            OperatorSpec::Blur { kernel, dim } => {
                check_kernel(kernel)?;
                if *dim == 0 {
                    return Err(LpnError::InvalidConfig("blur dim must be >= 1".into()));
                }
                Ok(LinearOperator::Blur {
                    kernel: kernel.clone(),
                    dim: *dim,
                })
            }
            OperatorSpec::Blur2d {
                kernel,
                height,
                width,
            } => {
                check_kernel(kernel)?;
                if *height == 0 || *width == 0 {
                    return Err(LpnError::InvalidConfig("blur2d shape must be >= 1".into()));
                }
                Ok(LinearOperator::Blur2d {
                    kernel: kernel.clone(),
                    height: *height,
                    width: *width,
                })
            }
            OperatorSpec::GaussianCs { rows, cols, seed } => {
                if *rows == 0 || *cols == 0 {
                    return Err(LpnError::InvalidConfig(
                        "gaussian_cs needs positive dims".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let scale = 1.0 / (*rows as f64).sqrt();
                // Row-major fill for a documented, seed-stable layout.
                let mut matrix = DMatrix::zeros(*rows, *cols);
                for i in 0..*rows {
                    for j in 0..*cols {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        matrix[(i, j)] = g * scale;
                    }
                }
                Ok(LinearOperator::Dense {
                    matrix,
                    label: format!("gaussian_cs({rows}x{cols}, seed {seed})"),
                })
            }
            OperatorSpec::Mask { keep, input_dim } => {
                if keep.is_empty() {
                    return Err(LpnError::InvalidConfig("mask keeps no coordinates".into()));
                }
                if keep.iter().any(|&i| i >= *input_dim) {
                    return Err(LpnError::InvalidConfig(
                        "mask index out of range".into(),
                    ));
                }
                Ok(LinearOperator::Mask {
                    keep: keep.clone(),
                    input_dim: *input_dim,
                })
            }
        }
    }
}

fn check_kernel(kernel: &[f64]) -> Result<()> {
    if kernel.is_empty() || kernel.len() % 2 == 0 {
        return Err(LpnError::InvalidConfig(
            "blur kernel must have odd length".into(),
        ));
    }
    Ok(())
}

/// A concrete linear map with forward and adjoint application.
#[derive(Debug, Clone)]
pub enum LinearOperator {
    Identity {
        dim: usize,
    },
    Blur {
        kernel: Vec<f64>,
        dim: usize,
    },
    Blur2d {
        kernel: Vec<f64>,
        height: usize,
        width: usize,
    },
    Dense {
        matrix: DMatrix<f64>,
        label: String,
    },
    Mask {
        keep: Vec<usize>,
        input_dim: usize,
    },
}

/// Reflect an out-of-range index back into `[0, n)` (symmetric padding,
/// `-1 -> 0`, `n -> n-1`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn blur_1d(kernel: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let c = (kernel.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, &k) in kernel.iter().enumerate() {
            let src = reflect(i as isize + t as isize - c, n);
            acc += k * x[src];
        }
        *o = acc;
    }
}

/// Exact transpose of [`blur_1d`]: scatter instead of gather.
fn blur_1d_adjoint(kernel: &[f64], y: &[f64], out: &mut [f64]) {
    let n = y.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    let c = (kernel.len() / 2) as isize;
    for (i, &yi) in y.iter().enumerate() {
        for (t, &k) in kernel.iter().enumerate() {
            let src = reflect(i as isize + t as isize - c, n);
            out[src] += k * yi;
        }
    }
}

impl LinearOperator {
    pub fn input_dim(&self) -> usize {
        match self {
            LinearOperator::Identity { dim } => *dim,
            LinearOperator::Blur { dim, .. } => *dim,
            LinearOperator::Blur2d { height, width, .. } => height * width,
            LinearOperator::Dense { matrix, .. } => matrix.ncols(),
            LinearOperator::Mask { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LinearOperator::Identity { dim } => *dim,
            LinearOperator::Blur { dim, .. } => *dim,
            LinearOperator::Blur2d { height, width, .. } => height * width,
            LinearOperator::Dense { matrix, .. } => matrix.nrows(),
            LinearOperator::Mask { keep, .. } => keep.len(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(LpnError::DimensionMismatch {
                context: "operator apply",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            LinearOperator::Identity { .. } => x.clone(),
            LinearOperator::Blur { kernel, dim } => {
                let mut out = DVector::zeros(*dim);
                blur_1d(kernel, x.as_slice(), out.as_mut_slice());
                out
            }
            LinearOperator::Blur2d {
                kernel,
                height,
                width,
            } => {
                let mut tmp = vec![0.0; height * width];
                // Rows, then columns.
                for r in 0..*height {
                    blur_1d(
                        kernel,
                        &x.as_slice()[r * width..(r + 1) * width],
                        &mut tmp[r * width..(r + 1) * width],
                    );
                }
                let mut out = DVector::zeros(height * width);
                let mut col_in = vec![0.0; *height];
                let mut col_out = vec![0.0; *height];
                for ccol in 0..*width {
                    for r in 0..*height {
                        col_in[r] = tmp[r * width + ccol];
                    }
                    blur_1d(kernel, &col_in, &mut col_out);
                    for r in 0..*height {
                        out[r * width + ccol] = col_out[r];
                    }
                }
                out
            }
            LinearOperator::Dense { matrix, .. } => matrix * x,
            LinearOperator::Mask { keep, .. } => {
                DVector::from_iterator(keep.len(), keep.iter().map(|&i| x[i]))
            }
        })
    }

    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.output_dim() {
            return Err(LpnError::DimensionMismatch {
                context: "operator adjoint",
                expected: self.output_dim(),
                got: y.len(),
            });
        }
        Ok(match self {
            LinearOperator::Identity { .. } => y.clone(),
            LinearOperator::Blur { kernel, dim } => {
                let mut out = DVector::zeros(*dim);
                blur_1d_adjoint(kernel, y.as_slice(), out.as_mut_slice());
                out
            }
            LinearOperator::Blur2d {
                kernel,
                height,
                width,
            } => {
                // Adjoint of (col blur . row blur) is row-adjoint . col-adjoint.
                let mut tmp = vec![0.0; height * width];
                let mut col_in = vec![0.0; *height];
                let mut col_out = vec![0.0; *height];
                for ccol in 0..*width {
                    for r in 0..*height {
                        col_in[r] = y[r * width + ccol];
                    }
                    blur_1d_adjoint(kernel, &col_in, &mut col_out);
                    for r in 0..*height {
                        tmp[r * width + ccol] = col_out[r];
                    }
                }
                let mut out = DVector::zeros(height * width);
                for r in 0..*height {
                    blur_1d_adjoint(
                        kernel,
                        &tmp[r * width..(r + 1) * width],
                        &mut out.as_mut_slice()[r * width..(r + 1) * width],
                    );
                }
                out
            }
            LinearOperator::Dense { matrix, .. } => matrix.tr_mul(y),
            LinearOperator::Mask { keep, input_dim } => {
                let mut out = DVector::zeros(*input_dim);
                for (j, &i) in keep.iter().enumerate() {
                    out[i] += y[j];
                }
                out
            }
        })
    }

    /// `A'(A x)`, the normal-equations map.
    pub fn gram(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.adjoint(&self.apply(x)?)
    }
}

/// Power-iteration estimate of `||A'A||` (the largest eigenvalue of the Gram
/// map, i.e. the squared spectral norm of `A`).
#[derive(Debug, Clone)]
pub struct OpNormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// Rayleigh quotients per iteration; non-decreasing up to round-off.
    pub trace: Vec<f64>,
}

pub fn op_norm_sq(op: &LinearOperator, iters: usize, seed: u64) -> Result<OpNormEstimate> {
    assert!(iters >= 1, "op_norm_sq needs at least one iteration");
    let n = op.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g
    });
    let nv = v.norm();
    if nv == 0.0 {
        v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    } else {
        v /= nv;
    }
    let mut trace = Vec::with_capacity(iters);
    let mut value = 0.0;
    for _ in 0..iters {
        let w = op.gram(&v)?;
        value = v.dot(&w); // Rayleigh quotient at unit v
        trace.push(value);
        let wn = w.norm();
        if wn == 0.0 {
            // Zero operator (or v in its kernel): the estimate is 0.
            value = 0.0;
            break;
        }
        v = w / wn;
    }
    Ok(OpNormEstimate {
        value,
        iterations: trace.len(),
        trace,
    })
}

/// Conjugate gradient for `M x = b` with symmetric positive-definite `M`
/// given as a closure. Stops when `||M x - b|| <= tol * ||b||`.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

pub fn cg_solve(
    apply_m: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> CgResult {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return CgResult {
            x: DVector::zeros(b.len()),
            iterations: 0,
            converged: true,
            rel_residual: 0.0,
        };
    }
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs_old = r.norm_squared();
    let mut iterations = 0;
    while iterations < max_iters {
        if rs_old.sqrt() <= tol * b_norm {
            break;
        }
        iterations += 1;
        let mp = apply_m(&p);
        let p_mp = p.dot(&mp);
        if p_mp <= 0.0 {
            // Not positive definite along p; bail out with the best iterate.
            break;
        }
        let alpha = rs_old / p_mp;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &mp, 1.0);
        let rs_new = r.norm_squared();
        p = &r + &p * (rs_new / rs_old);
        rs_old = rs_new;
    }
    let rel_residual = rs_old.sqrt() / b_norm;
    CgResult {
        x,
        iterations,
        converged: rel_residual <= tol,
        rel_residual,
    }
}
