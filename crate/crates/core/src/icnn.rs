//! Input-convex scalar network and its input-gradient map.
//!
//! The scalar potential is a dense network
//!
//! ```text
//! z_1 = g(H_1 y + b_1)
//! z_k = g(W_k z_{k-1} + H_k y + b_k)     k = 2..K
//! psi(y) = w' z_K + b
//! ```
//!
//! with softplus activation `g` and entrywise nonnegative `W_k` and `w`,
//! which makes `psi` convex in `y`. Adding `alpha/2 ||y||^2` makes it
//! `alpha`-strongly convex, and the gradient map
//!
//! ```text
//! f(y) = grad psi(y) + alpha y
//! ```
//!
//! is then a proximal operator of some (generally nonconvex) regularizer.
//!
//! All differentiation here is exact and hand-derived for this fixed
//! architecture: a reverse pass for `f = grad psi`, a forward-over-reverse
//! pass for Jacobian-vector products, and a reverse-over-forward pass for
//! parameter gradients of losses applied to `f` (second-order
//! backpropagation). Everything is validated against finite differences in
//! the test suite.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result};
use crate::loss::{loss_value_and_output_grad, LossKind};

/// Architecture constants of the potential network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcnnArch {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    /// Strong-convexity weight added as `alpha/2 ||y||^2`. The plug-and-play
    /// convergence results need `0 < alpha < 1`; `alpha = 0` (plain potential)
    /// and `alpha = 1` (identity proximal at zero weights) are valid networks
    /// and are accepted here, with the open interval checked by the solvers.
    pub alpha: f64,
    /// Softplus sharpness; the activation is `(1/beta) log(1 + exp(beta x))`.
    pub beta: f64,
}

impl IcnnArch {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, alpha: f64, beta: f64) -> Result<Self> {
        let arch = IcnnArch {
            input_dim,
            hidden_widths,
            alpha,
            beta,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(LpnError::InvalidArch("input_dim must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(LpnError::InvalidArch(
                "hidden_widths must be nonempty with all widths >= 1".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(LpnError::InvalidArch(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(LpnError::InvalidArch(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// The convergence theorems for the plug-and-play solvers assume this.
    pub fn alpha_in_open_unit_interval(&self) -> bool {
        self.alpha > 0.0 && self.alpha < 1.0
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }
}

/// One hidden layer: `a_k = wz z_{k-1} + wy y + bias`.
///
/// The first layer has no preceding activation, represented by a `d_1 x 0`
/// matrix so every layer follows the same recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wz: DMatrix<f64>,
    pub wy: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// All learnable weights of the potential network.
///
/// Invariant: `wz` (layers 2..K) and `w_out` are entrywise nonnegative after
/// construction, initialization, and every training step.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    pub layers: Vec<LayerParams>,
    pub w_out: DVector<f64>,
    pub b_out: f64,
}

/// A parameter-shaped buffer with no sign constraint: gradients and optimizer
/// moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub layers: Vec<LayerParams>,
    pub w_out: DVector<f64>,
    pub b_out: f64,
}

fn zero_tensors(arch: &IcnnArch) -> (Vec<LayerParams>, DVector<f64>, f64) {
    let n = arch.input_dim;
    let mut layers = Vec::with_capacity(arch.depth());
    let mut prev = 0usize;
    for &d in &arch.hidden_widths {
        layers.push(LayerParams {
            wz: DMatrix::zeros(d, prev),
            wy: DMatrix::zeros(d, n),
            bias: DVector::zeros(d),
        });
        prev = d;
    }
    let w_out = DVector::zeros(prev);
    (layers, w_out, 0.0)
}

impl IcnnParams {
    pub fn zeros(arch: &IcnnArch) -> Self {
        let (layers, w_out, b_out) = zero_tensors(arch);
        IcnnParams {
            layers,
            w_out,
            b_out,
        }
    }

    pub fn matches_arch(&self, arch: &IcnnArch) -> bool {
        if self.layers.len() != arch.depth() {
            return false;
        }
        let mut prev = 0usize;
        for (layer, &d) in self.layers.iter().zip(&arch.hidden_widths) {
            if layer.wz.shape() != (d, prev)
                || layer.wy.shape() != (d, arch.input_dim)
                || layer.bias.len() != d
            {
                return false;
            }
            prev = d;
        }
        self.w_out.len() == prev
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.wz.len() + l.wy.len() + l.bias.len())
            .sum::<usize>()
            + self.w_out.len()
            + 1
    }

    /// Flat copy of all parameters in the canonical array order
    /// (per layer: wz, wy, bias; then w_out, b_out), row-major within arrays.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            push_row_major(&mut out, &layer.wz);
            push_row_major(&mut out, &layer.wy);
            out.extend(layer.bias.iter());
        }
        out.extend(self.w_out.iter());
        out.push(self.b_out);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); shapes come from `self`.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(LpnError::DimensionMismatch {
                context: "assign_from_flat",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut pos = 0usize;
        for layer in &mut self.layers {
            pos = pop_row_major(&mut layer.wz, flat, pos);
            pos = pop_row_major(&mut layer.wy, flat, pos);
            for v in layer.bias.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        for v in self.w_out.iter_mut() {
            *v = flat[pos];
            pos += 1;
        }
        self.b_out = flat[pos];
        Ok(())
    }
}

impl ParamGrad {
    pub fn zeros(arch: &IcnnArch) -> Self {
        let (layers, w_out, b_out) = zero_tensors(arch);
        ParamGrad {
            layers,
            w_out,
            b_out,
        }
    }

    pub fn zeros_like(params: &IcnnParams) -> Self {
        ParamGrad {
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams {
                    wz: DMatrix::zeros(l.wz.nrows(), l.wz.ncols()),
                    wy: DMatrix::zeros(l.wy.nrows(), l.wy.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
            w_out: DVector::zeros(params.w_out.len()),
            b_out: 0.0,
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            layer.wz *= s;
            layer.wy *= s;
            layer.bias *= s;
        }
        self.w_out *= s;
        self.b_out *= s;
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            push_row_major(&mut out, &layer.wz);
            push_row_major(&mut out, &layer.wy);
            out.extend(layer.bias.iter());
        }
        out.extend(self.w_out.iter());
        out.push(self.b_out);
        out
    }

    pub fn inf_norm(&self) -> f64 {
        self.to_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn pop_row_major(m: &mut DMatrix<f64>, flat: &[f64], mut pos: usize) -> usize {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = flat[pos];
            pos += 1;
        }
    }
    pos
}

/// Visit the entries of a parameter block and three grad-shaped companions in
/// lockstep; used by the optimizer.
pub fn zip_param_buffers(
    params: &mut IcnnParams,
    grad: &ParamGrad,
    m1: &mut ParamGrad,
    m2: &mut ParamGrad,
    mut f: impl FnMut(&mut f64, f64, &mut f64, &mut f64),
) {
    for (((pl, gl), ml), vl) in params
        .layers
        .iter_mut()
        .zip(&grad.layers)
        .zip(&mut m1.layers)
        .zip(&mut m2.layers)
    {
        for (((p, &g), m), v) in pl
            .wz
            .iter_mut()
            .zip(gl.wz.iter())
            .zip(ml.wz.iter_mut())
            .zip(vl.wz.iter_mut())
        {
            f(p, g, m, v);
        }
        for (((p, &g), m), v) in pl
            .wy
            .iter_mut()
            .zip(gl.wy.iter())
            .zip(ml.wy.iter_mut())
            .zip(vl.wy.iter_mut())
        {
            f(p, g, m, v);
        }
        for (((p, &g), m), v) in pl
            .bias
            .iter_mut()
            .zip(gl.bias.iter())
            .zip(ml.bias.iter_mut())
            .zip(vl.bias.iter_mut())
        {
            f(p, g, m, v);
        }
    }
    for (((p, &g), m), v) in params
        .w_out
        .iter_mut()
        .zip(grad.w_out.iter())
        .zip(m1.w_out.iter_mut())
        .zip(m2.w_out.iter_mut())
    {
        f(p, g, m, v);
    }
    f(&mut params.b_out, grad.b_out, &mut m1.b_out, &mut m2.b_out);
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// All arrays `N(0, 1/fan_in)`; sign-constrained arrays are then clipped
    /// to zero.
    #[default]
    Gaussian,
    /// Sign-constrained arrays are `exp` of the Gaussian draw, making every
    /// entry strictly positive.
    ExpGaussian,
}

/// Draw fresh parameters. Deterministic given `(arch, seed, scheme)`.
pub fn init_params(arch: &IcnnArch, seed: u64, scheme: InitScheme) -> IcnnParams {
    init_params_scaled(arch, seed, scheme, 1.0)
}

/// [`init_params`] with the Gaussian standard deviation multiplied by
/// `init_scale` (the distribution's variance is not canonical; larger input
/// weights give the softplus units a sharper effective transition).
pub fn init_params_scaled(
    arch: &IcnnArch,
    seed: u64,
    scheme: InitScheme,
    init_scale: f64,
) -> IcnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = IcnnParams::zeros(arch);
    let fill = |m: &mut DMatrix<f64>, nonneg: bool, rng: &mut ChaCha8Rng| {
        if m.ncols() == 0 {
            return;
        }
        let scale = init_scale / (m.ncols() as f64).sqrt();
        // Row-major draw order, matching the documented array layout.
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let g: f64 = StandardNormal.sample(rng);
                m[(i, j)] = match (scheme, nonneg) {
                    (InitScheme::Gaussian, false) | (InitScheme::ExpGaussian, false) => g * scale,
                    (InitScheme::Gaussian, true) => (g * scale).max(0.0),
                    (InitScheme::ExpGaussian, true) => (g * scale).exp(),
                };
            }
        }
    };
    for layer in &mut params.layers {
        fill(&mut layer.wz, true, &mut rng);
        fill(&mut layer.wy, false, &mut rng);
        // Biases start at zero.
    }
    let d_last = params.w_out.len();
    let mut w_col = DMatrix::zeros(d_last, 1);
    fill(&mut w_col, true, &mut rng);
    params.w_out = w_col.column(0).into_owned();
    params.b_out = 0.0;
    params
}

/// Project the sign-constrained arrays onto the nonnegative orthant.
/// Idempotent; `wy`, `bias`, and `b_out` are untouched.
pub fn clip_nonneg(params: &IcnnParams) -> IcnnParams {
    let mut out = params.clone();
    clip_nonneg_in_place(&mut out);
    out
}

pub fn clip_nonneg_in_place(params: &mut IcnnParams) {
    for layer in &mut params.layers {
        for v in layer.wz.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    for v in params.w_out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn min_constrained_entry(params: &IcnnParams) -> f64 {
    let mut m = f64::INFINITY;
    for layer in &params.layers {
        for v in layer.wz.iter() {
            m = m.min(*v);
        }
    }
    for v in params.w_out.iter() {
        m = m.min(*v);
    }
    m
}

// ---------------------------------------------------------------------------
// Softplus activation with analytic first and second derivatives.
// ---------------------------------------------------------------------------

/// Softplus `(1/beta) log(1 + exp(beta x))` and its first derivative
/// `sigmoid(beta x)` from a single exponential, overflow-safe for large
/// `|beta x|`.
#[inline]
fn softplus_with_d1(beta: f64, x: f64) -> (f64, f64) {
    let t = beta * x;
    if t > 0.0 {
        let e = (-t).exp();
        (x + e.ln_1p() / beta, 1.0 / (1.0 + e))
    } else {
        let e = t.exp();
        (e.ln_1p() / beta, e / (1.0 + e))
    }
}

/// Second derivative `beta s (1 - s)` from an already-computed first
/// derivative `s = sigmoid(beta x)`.
#[inline]
fn softplus_d2_from_d1(beta: f64, s: f64) -> f64 {
    beta * s * (1.0 - s)
}

// ---------------------------------------------------------------------------
// Forward pass and derivative kernels. All batched: inputs are `n x B`
// matrices with one sample per column.
// ---------------------------------------------------------------------------

/// Activations and activation derivatives of every layer for a batch of
/// inputs. The first softplus derivative is produced together with the value
/// from one exponential; the second derivative is algebraic in the first.
struct ForwardTrace {
    /// `z[k] = g(a[k])`, `d_k x B`.
    z: Vec<DMatrix<f64>>,
    /// `g1[k] = g'(a[k])`.
    g1: Vec<DMatrix<f64>>,
}

fn forward_trace(params: &IcnnParams, arch: &IcnnArch, ys: &DMatrix<f64>) -> ForwardTrace {
    let depth = params.layers.len();
    let bsz = ys.ncols();
    let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    let mut g1: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    for (k, layer) in params.layers.iter().enumerate() {
        let mut ak = &layer.wy * ys;
        if k > 0 {
            ak.gemm(1.0, &layer.wz, &z[k - 1], 1.0);
        }
        for mut col in ak.column_iter_mut() {
            col += &layer.bias;
        }
        let mut g1k = DMatrix::zeros(ak.nrows(), ak.ncols());
        for (zv, sv) in ak.iter_mut().zip(g1k.iter_mut()) {
            let (value, slope) = softplus_with_d1(arch.beta, *zv);
            *zv = value;
            *sv = slope;
        }
        z.push(ak);
        g1.push(g1k);
    }
    debug_assert_eq!(z.len(), depth);
    debug_assert!(bsz == 0 || z.iter().all(|m| m.ncols() == bsz));
    ForwardTrace { z, g1 }
}

fn check_input_dim(arch: &IcnnArch, got: usize, context: &'static str) -> Result<()> {
    if got != arch.input_dim {
        return Err(LpnError::DimensionMismatch {
            context,
            expected: arch.input_dim,
            got,
        });
    }
    Ok(())
}

fn check_params(params: &IcnnParams, arch: &IcnnArch) -> Result<()> {
    if !params.matches_arch(arch) {
        return Err(LpnError::InvalidArch(
            "parameter shapes do not match the architecture".into(),
        ));
    }
    Ok(())
}

/// Strongly convex potential `psi(y) + alpha/2 ||y||^2` for each column.
pub fn psi_batch(params: &IcnnParams, arch: &IcnnArch, ys: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_params(params, arch)?;
    check_input_dim(arch, ys.nrows(), "psi")?;
    let trace = forward_trace(params, arch, ys);
    let z_last = &trace.z[trace.z.len() - 1];
    let mut out = DVector::zeros(ys.ncols());
    for (j, col) in z_last.column_iter().enumerate() {
        out[j] = params.w_out.dot(&col) + params.b_out
            + 0.5 * arch.alpha * ys.column(j).norm_squared();
    }
    Ok(out)
}

/// Plain convex potential `psi(y)` without the quadratic term.
pub fn psi_plain(params: &IcnnParams, arch: &IcnnArch, y: &DVector<f64>) -> Result<f64> {
    check_params(params, arch)?;
    check_input_dim(arch, y.len(), "psi")?;
    let ys = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let trace = forward_trace(params, arch, &ys);
    let z_last = &trace.z[trace.z.len() - 1];
    Ok(params.w_out.dot(&z_last.column(0).into_owned()) + params.b_out)
}

/// Strongly convex potential at a single point.
pub fn psi(params: &IcnnParams, arch: &IcnnArch, y: &DVector<f64>) -> Result<f64> {
    Ok(psi_plain(params, arch, y)? + 0.5 * arch.alpha * y.norm_squared())
}

/// The gradient map `f(y) = grad psi(y) + alpha y` for a batch of inputs,
/// computed by an exact reverse pass.
pub fn lpn_forward_batch(
    params: &IcnnParams,
    arch: &IcnnArch,
    ys: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_params(params, arch)?;
    check_input_dim(arch, ys.nrows(), "lpn_forward")?;
    let trace = forward_trace(params, arch, ys);
    let (f, _) = input_grad_from_trace(params, arch, ys, &trace);
    Ok(f)
}

/// Reverse pass producing `f = grad psi + alpha y` plus the per-layer
/// adjoint states `delta_k = d psi / d a_k` needed by second-order kernels.
fn input_grad_from_trace(
    params: &IcnnParams,
    arch: &IcnnArch,
    ys: &DMatrix<f64>,
    trace: &ForwardTrace,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let depth = params.layers.len();
    let bsz = ys.ncols();
    let mut deltas = vec![DMatrix::zeros(0, 0); depth];
    // s_K = w broadcast over the batch.
    let mut s = DMatrix::from_fn(params.w_out.len(), bsz, |i, _| params.w_out[i]);
    let mut f = ys * arch.alpha;
    for k in (0..depth).rev() {
        let delta = trace.g1[k].component_mul(&s);
        f.gemm_tr(1.0, &params.layers[k].wy, &delta, 1.0);
        if k > 0 {
            s = DMatrix::zeros(params.layers[k].wz.ncols(), bsz);
            s.gemm_tr(1.0, &params.layers[k].wz, &delta, 0.0);
        }
        deltas[k] = delta;
    }
    (f, deltas)
}

/// `f(y)` at a single point.
pub fn lpn_forward(params: &IcnnParams, arch: &IcnnArch, y: &DVector<f64>) -> Result<DVector<f64>> {
    let ys = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let f = lpn_forward_batch(params, arch, &ys)?;
    Ok(f.column(0).into_owned())
}

/// Exact Jacobian-vector products `J_f(y) v` for several directions `v`
/// (columns of `vs`) at one point, by forward-mode differentiation of the
/// reverse pass.
pub fn directional_derivative_batch(
    params: &IcnnParams,
    arch: &IcnnArch,
    y: &DVector<f64>,
    vs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_params(params, arch)?;
    check_input_dim(arch, y.len(), "directional_derivative")?;
    check_input_dim(arch, vs.nrows(), "directional_derivative")?;
    let depth = params.layers.len();
    let m = vs.ncols();

    let ys = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let trace = forward_trace(params, arch, &ys);
    let (_, deltas) = input_grad_from_trace(params, arch, &ys, &trace);

    let g1: Vec<DVector<f64>> = trace.g1.iter().map(|m| m.column(0).into_owned()).collect();
    let g2: Vec<DVector<f64>> = g1
        .iter()
        .map(|s| s.map(|v| softplus_d2_from_d1(arch.beta, v)))
        .collect();

    // Forward sweep of the tangents: da_k = wz dz_{k-1} + wy v.
    let mut da: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    let mut dz_prev = DMatrix::zeros(0, m);
    for (k, layer) in params.layers.iter().enumerate() {
        let mut dak = &layer.wy * vs;
        if k > 0 {
            dak.gemm(1.0, &layer.wz, &dz_prev, 1.0);
        }
        let mut dzk = dak.clone();
        for mut col in dzk.column_iter_mut() {
            col.component_mul_assign(&g1[k]);
        }
        da.push(dak);
        dz_prev = dzk;
    }

    // Reverse sweep of the tangents: ds_K = 0,
    // d(delta_k) = g''(a_k) . da_k . s_k + g'(a_k) . ds_k.
    // The reverse states s_k are rebuilt from the adjoints of the layer
    // above (s_K = w, s_k = wz_{k+1}' delta_{k+1}) rather than dividing
    // delta_k by g'(a_k), which vanishes on saturated units.
    let mut out = vs * arch.alpha;
    let mut ds = DMatrix::zeros(params.w_out.len(), m);
    for k in (0..depth).rev() {
        let s_k: DVector<f64> = if k == depth - 1 {
            params.w_out.clone()
        } else {
            let mut s = DVector::zeros(params.layers[k + 1].wz.ncols());
            s.gemm_tr(1.0, &params.layers[k + 1].wz, &deltas[k + 1].column(0), 0.0);
            s
        };
        let mut ddelta = DMatrix::zeros(da[k].nrows(), m);
        for j in 0..m {
            for i in 0..da[k].nrows() {
                ddelta[(i, j)] = g2[k][i] * da[k][(i, j)] * s_k[i] + g1[k][i] * ds[(i, j)];
            }
        }
        out.gemm_tr(1.0, &params.layers[k].wy, &ddelta, 1.0);
        if k > 0 {
            ds = DMatrix::zeros(params.layers[k].wz.ncols(), m);
            ds.gemm_tr(1.0, &params.layers[k].wz, &ddelta, 0.0);
        }
    }
    Ok(out)
}

/// `J_f(y) v` for a single direction.
pub fn directional_derivative(
    params: &IcnnParams,
    arch: &IcnnArch,
    y: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let vs = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let out = directional_derivative_batch(params, arch, y, &vs)?;
    Ok(out.column(0).into_owned())
}

/// Dense Jacobian of `f` at `y`, assembled column-by-column from
/// Jacobian-vector products with basis vectors. Symmetric positive
/// semidefinite up to round-off, with eigenvalues bounded below by `alpha`.
pub fn lpn_jacobian(params: &IcnnParams, arch: &IcnnArch, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = arch.input_dim;
    let eye = DMatrix::identity(n, n);
    directional_derivative_batch(params, arch, y, &eye)
}

/// Mean loss over a batch of `(x, y)` pairs and its exact parameter gradient.
///
/// The columns of `xs` are clean signals, columns of `ys` the corresponding
/// noisy inputs. The loss is applied to `f(y) - x` per sample and averaged;
/// the returned gradient is the gradient of that mean, which equals the mean
/// of per-sample gradients.
pub fn param_grad_through_lpn(
    params: &IcnnParams,
    arch: &IcnnArch,
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    loss: LossKind,
) -> Result<(f64, ParamGrad)> {
    check_params(params, arch)?;
    check_input_dim(arch, xs.nrows(), "param_grad_through_lpn")?;
    check_input_dim(arch, ys.nrows(), "param_grad_through_lpn")?;
    if xs.ncols() != ys.ncols() {
        return Err(LpnError::DimensionMismatch {
            context: "param_grad_through_lpn batch",
            expected: xs.ncols(),
            got: ys.ncols(),
        });
    }
    let bsz = xs.ncols();
    if bsz == 0 {
        return Err(LpnError::EmptyBatch);
    }
    let depth = params.layers.len();
    let beta = arch.beta;

    let trace = forward_trace(params, arch, ys);
    let (f, _) = input_grad_from_trace(params, arch, ys, &trace);

    // Per-sample loss and the seed direction r_i = d loss_i / d f_i.
    let mut loss_sum = 0.0;
    let mut rs = DMatrix::zeros(arch.input_dim, bsz);
    for j in 0..bsz {
        let fj = f.column(j).into_owned();
        let xj = xs.column(j).into_owned();
        let (value, grad) = loss_value_and_output_grad(loss, &fj, &xj)?;
        loss_sum += value;
        rs.set_column(j, &grad);
    }

    // The alpha y term of f carries no parameter dependence, so the
    // parameter gradient is that of sum_i <grad_y psi(y_i), r_i>, computed by
    // a reverse pass over the forward-mode recursion in direction r_i.
    //
    // Tangent sweep: ta_k = wz tz_{k-1} + wy r, tz_k = g'(a_k) . ta_k.
    let g1 = &trace.g1;
    let mut ta: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    let mut tz: Vec<DMatrix<f64>> = Vec::with_capacity(depth);
    for (k, layer) in params.layers.iter().enumerate() {
        let mut tak = &layer.wy * &rs;
        if k > 0 {
            tak.gemm(1.0, &layer.wz, &tz[k - 1], 1.0);
        }
        let tzk = g1[k].component_mul(&tak);
        ta.push(tak);
        tz.push(tzk);
    }

    // Reverse sweep. zb/tzb are adjoints of z_k/tz_k with respect to the
    // scalar sum_i w' tz_K^i.
    let ones = DVector::from_element(bsz, 1.0);
    let mut grad = ParamGrad::zeros_like(params);
    grad.w_out = &tz[depth - 1] * &ones;
    grad.b_out = 0.0;

    let mut zb = DMatrix::zeros(params.w_out.len(), bsz);
    let mut tzb = DMatrix::from_fn(params.w_out.len(), bsz, |i, _| params.w_out[i]);
    for k in (0..depth).rev() {
        // Through tz_k = g'(a_k) . ta_k and z_k = g(a_k).
        let tab = g1[k].component_mul(&tzb);
        let mut ab = zb.component_mul(&g1[k]);
        for j in 0..bsz {
            for i in 0..ab.nrows() {
                ab[(i, j)] += softplus_d2_from_d1(beta, g1[k][(i, j)])
                    * ta[k][(i, j)]
                    * tzb[(i, j)];
            }
        }
        // Through the affine maps.
        let layer = &params.layers[k];
        let gl = &mut grad.layers[k];
        if k > 0 {
            gl.wz = &ab * trace.z[k - 1].transpose() + &tab * tz[k - 1].transpose();
            zb = DMatrix::zeros(layer.wz.ncols(), bsz);
            zb.gemm_tr(1.0, &layer.wz, &ab, 0.0);
            tzb = DMatrix::zeros(layer.wz.ncols(), bsz);
            tzb.gemm_tr(1.0, &layer.wz, &tab, 0.0);
        }
        gl.wy = &ab * ys.transpose() + &tab * rs.transpose();
        gl.bias = &ab * &ones;
    }

    let inv_b = 1.0 / bsz as f64;
    grad.scale(inv_b);
    Ok((loss_sum * inv_b, grad))
}
