//! Denoising-based training: batch construction, Adam, the annealing
//! schedule for the matching loss, and the staged training loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result};
use crate::icnn::{
    clip_nonneg_in_place, init_params_scaled, param_grad_through_lpn, zip_param_buffers,
    IcnnArch, IcnnParams, InitScheme, ParamGrad,
};
pub use crate::loss::{loss_l1, loss_l2, loss_pm, LossForm, LossKind};

/// One stage of the matching-loss annealing plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmStage {
    pub iters: usize,
    pub gamma: f64,
    pub lr: f64,
}

/// Piecewise-constant `(iterations, gamma, learning rate)` annealing plan.
/// `gamma` must be non-increasing across stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GammaSchedule {
    pub stages: Vec<PmStage>,
}

impl GammaSchedule {
    pub fn new(stages: Vec<PmStage>) -> Result<Self> {
        let s = GammaSchedule { stages };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.iters == 0 {
                return Err(LpnError::InvalidConfig(format!(
                    "schedule stage {i} has zero iterations"
                )));
            }
            if !(stage.gamma > 0.0) || !(stage.lr > 0.0) {
                return Err(LpnError::InvalidConfig(format!(
                    "schedule stage {i} needs positive gamma and lr"
                )));
            }
            if stage.gamma > prev {
                return Err(LpnError::InvalidConfig(format!(
                    "gamma increases at stage {i}: {} > {prev}",
                    stage.gamma
                )));
            }
            prev = stage.gamma;
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.stages.iter().map(|s| s.iters).sum()
    }
}

/// A pretraining stage: plain denoising loss at a fixed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub iters: usize,
    pub lr: f64,
}

/// Which denoising loss to use before the matching-loss stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PretrainLoss {
    #[default]
    L1,
    L2,
}

/// Data distribution to draw clean samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// I.i.d. Laplace(mu, b) coordinates.
    Laplacian { mu: f64, b: f64, dim: usize },
    /// Mixture of isotropic Gaussians.
    GaussianMixture {
        components: Vec<MixtureComponent>,
        dim: usize,
    },
    /// Rows of a CSV file, sampled uniformly.
    FileDataset { path: String, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// In-memory sampler for a [`DataSource`].
pub struct Sampler {
    dim: usize,
    inner: SamplerInner,
}

enum SamplerInner {
    Laplacian { mu: f64, b: f64 },
    Mixture { components: Vec<MixtureComponent>, cum: Vec<f64> },
    Rows(Vec<DVector<f64>>),
}

impl Sampler {
    pub fn new(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Laplacian { mu, b, dim } => {
                if !(*b > 0.0) {
                    return Err(LpnError::InvalidConfig(format!(
                        "Laplace scale must be positive, got {b}"
                    )));
                }
                Ok(Sampler {
                    dim: *dim,
                    inner: SamplerInner::Laplacian { mu: *mu, b: *b },
                })
            }
            DataSource::GaussianMixture { components, dim } => {
                if components.is_empty() {
                    return Err(LpnError::InvalidConfig("mixture needs components".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if !(total > 0.0) {
                    return Err(LpnError::InvalidConfig(
                        "mixture weights must sum to a positive value".into(),
                    ));
                }
                for c in components {
                    if c.mean.len() != *dim {
                        return Err(LpnError::DimensionMismatch {
                            context: "mixture component mean",
                            expected: *dim,
                            got: c.mean.len(),
                        });
                    }
                    if !(c.std >= 0.0) {
                        return Err(LpnError::InvalidConfig("component std must be >= 0".into()));
                    }
                }
                let mut cum = Vec::with_capacity(components.len());
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight / total;
                    cum.push(acc);
                }
                Ok(Sampler {
                    dim: *dim,
                    inner: SamplerInner::Mixture {
                        components: components.clone(),
                        cum,
                    },
                })
            }
            DataSource::FileDataset { path, dim } => {
                let text = std::fs::read_to_string(path)?;
                let mut rows = Vec::new();
                for (lineno, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let vals: std::result::Result<Vec<f64>, _> =
                        line.split(',').map(|t| t.trim().parse::<f64>()).collect();
                    let vals = vals.map_err(|e| {
                        LpnError::InvalidConfig(format!(
                            "bad number in {path} line {}: {e}",
                            lineno + 1
                        ))
                    })?;
                    if vals.len() != *dim {
                        return Err(LpnError::DimensionMismatch {
                            context: "dataset row",
                            expected: *dim,
                            got: vals.len(),
                        });
                    }
                    rows.push(DVector::from_vec(vals));
                }
                if rows.is_empty() {
                    return Err(LpnError::InvalidConfig(format!("{path} has no rows")));
                }
                Ok(Sampler {
                    dim: *dim,
                    inner: SamplerInner::Rows(rows),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draw one clean sample into a column.
    fn sample_into(&self, rng: &mut ChaCha8Rng, mut out: nalgebra::DVectorViewMut<f64>) {
        match &self.inner {
            SamplerInner::Laplacian { mu, b } => {
                for v in out.iter_mut() {
                    // Inverse CDF of the Laplace distribution; the clamp
                    // guards ln(0) at the u = -1/2 endpoint.
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let t = (-2.0 * u.abs()).max(-1.0 + 1e-16);
                    *v = mu - b * u.signum() * t.ln_1p();
                }
            }
            SamplerInner::Mixture { components, cum } => {
                let u: f64 = rng.random();
                let idx = cum.iter().position(|&c| u <= c).unwrap_or(cum.len() - 1);
                let c = &components[idx];
                for (v, m) in out.iter_mut().zip(&c.mean) {
                    let g: f64 = StandardNormal.sample(rng);
                    *v = m + c.std * g;
                }
            }
            SamplerInner::Rows(rows) => {
                let idx = rng.random_range(0..rows.len());
                out.copy_from(&rows[idx]);
            }
        }
    }
}

/// Draw `(clean, noisy)` batches: `x ~ source`, `y = x + sigma * N(0, I)`.
/// Columns are samples. Deterministic given the RNG state.
pub fn make_batch(
    sampler: &Sampler,
    sigma: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sampler.dim();
    let mut xs = DMatrix::zeros(n, batch_size);
    let mut ys = DMatrix::zeros(n, batch_size);
    for j in 0..batch_size {
        sampler.sample_into(rng, xs.column_mut(j));
        for i in 0..n {
            let g: f64 = StandardNormal.sample(rng);
            ys[(i, j)] = xs[(i, j)] + sigma * g;
        }
    }
    (xs, ys)
}

/// Adam hyperparameters. Defaults follow the usual convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first/second moment accumulators and step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: ParamGrad,
    pub second_moment: ParamGrad,
    pub step_count: usize,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(arch: &IcnnArch, hyper: AdamHyper) -> Self {
        AdamState {
            first_moment: ParamGrad::zeros(arch),
            second_moment: ParamGrad::zeros(arch),
            step_count: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update followed by projection of the
/// sign-constrained weights onto the nonnegative orthant.
pub fn adam_step(state: &mut AdamState, params: &mut IcnnParams, grad: &ParamGrad, lr: f64) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let AdamHyper {
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    zip_param_buffers(
        params,
        grad,
        &mut state.first_moment,
        &mut state.second_moment,
        |p, g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        },
    );
    clip_nonneg_in_place(params);
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Noise standard deviation for `y = x + sigma v`.
    pub sigma: f64,
    pub batch_size: usize,
    /// Plain-loss stages run before the matching-loss schedule.
    pub pretrain: Vec<LrStage>,
    pub pretrain_loss: PretrainLoss,
    /// Matching-loss annealing stages.
    pub schedule: GammaSchedule,
    pub seed: u64,
    pub loss_form: LossForm,
    #[serde(default)]
    pub init_scheme: InitScheme,
    /// Multiplier on the initialization standard deviation.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub adam: AdamHyper,
}

fn default_init_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(LpnError::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.batch_size == 0 {
            return Err(LpnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        for (i, s) in self.pretrain.iter().enumerate() {
            if s.iters == 0 || !(s.lr > 0.0) {
                return Err(LpnError::InvalidConfig(format!(
                    "pretrain stage {i} needs iters >= 1 and positive lr"
                )));
            }
        }
        self.schedule.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub stage: String,
    pub gamma: Option<f64>,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: IcnnParams,
    pub log: Vec<LogRow>,
}

/// Train from scratch: initialize from the seed, run the pretraining stages
/// with the plain loss, then the matching-loss schedule. Deterministic given
/// the config.
pub fn train(arch: &IcnnArch, config: &TrainConfig, source: &DataSource) -> Result<TrainOutput> {
    arch.validate()?;
    config.validate()?;
    let params = init_params_scaled(arch, config.seed, config.init_scheme, config.init_scale);
    train_from(params, arch, config, source)
}

/// Continue training from existing parameters (e.g. a loaded checkpoint).
pub fn train_from(
    mut params: IcnnParams,
    arch: &IcnnArch,
    config: &TrainConfig,
    source: &DataSource,
) -> Result<TrainOutput> {
    config.validate()?;
    let sampler = Sampler::new(source)?;
    if sampler.dim() != arch.input_dim {
        return Err(LpnError::DimensionMismatch {
            context: "train data source",
            expected: arch.input_dim,
            got: sampler.dim(),
        });
    }
    // The data stream is independent of the init stream.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut adam = AdamState::new(arch, config.adam);
    let mut log = Vec::with_capacity(
        config.pretrain.iter().map(|s| s.iters).sum::<usize>() + config.schedule.total_iters(),
    );
    let mut iteration = 0usize;

    let pretrain_kind = match config.pretrain_loss {
        PretrainLoss::L1 => LossKind::L1,
        PretrainLoss::L2 => LossKind::L2,
    };
    for (si, stage) in config.pretrain.iter().enumerate() {
        let stage_name = format!("pretrain-{}", si + 1);
        for _ in 0..stage.iters {
            iteration += 1;
            let (xs, ys) = make_batch(&sampler, config.sigma, config.batch_size, &mut rng);
            let (loss, grad) = param_grad_through_lpn(&params, arch, &xs, &ys, pretrain_kind)?;
            if !loss.is_finite() {
                return Err(LpnError::NonFiniteLoss {
                    iteration,
                    stage: stage_name,
                    gamma: None,
                    lr: stage.lr,
                });
            }
            adam_step(&mut adam, &mut params, &grad, stage.lr);
            log.push(LogRow {
                iteration,
                stage: stage_name.clone(),
                gamma: None,
                lr: stage.lr,
                loss,
            });
        }
    }

    for (si, stage) in config.schedule.stages.iter().enumerate() {
        let stage_name = format!("pm-{}", si + 1);
        let kind = LossKind::Pm {
            gamma: stage.gamma,
            form: config.loss_form,
        };
        for _ in 0..stage.iters {
            iteration += 1;
            let (xs, ys) = make_batch(&sampler, config.sigma, config.batch_size, &mut rng);
            let (loss, grad) = param_grad_through_lpn(&params, arch, &xs, &ys, kind)?;
            if !loss.is_finite() {
                return Err(LpnError::NonFiniteLoss {
                    iteration,
                    stage: stage_name,
                    gamma: Some(stage.gamma),
                    lr: stage.lr,
                });
            }
            adam_step(&mut adam, &mut params, &grad, stage.lr);
            log.push(LogRow {
                iteration,
                stage: stage_name.clone(),
                gamma: Some(stage.gamma),
                lr: stage.lr,
                loss,
            });
        }
    }

    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::min_constrained_entry;
    use approx::assert_relative_eq;

    fn tiny_arch() -> IcnnArch {
        IcnnArch::new(1, vec![4, 4], 0.1, 10.0).unwrap()
    }

    fn laplace_unit() -> DataSource {
        DataSource::Laplacian {
            mu: 0.0,
            b: 1.0,
            dim: 1,
        }
    }

    #[test]
    fn schedule_rejects_increasing_gamma() {
        let s = GammaSchedule {
            stages: vec![
                PmStage {
                    iters: 1,
                    gamma: 0.3,
                    lr: 1e-3,
                },
                PmStage {
                    iters: 1,
                    gamma: 0.5,
                    lr: 1e-3,
                },
            ],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn schedule_accepts_nonincreasing_gamma() {
        let s = GammaSchedule {
            stages: vec![
                PmStage {
                    iters: 2,
                    gamma: 0.5,
                    lr: 1e-3,
                },
                PmStage {
                    iters: 2,
                    gamma: 0.5,
                    lr: 1e-4,
                },
                PmStage {
                    iters: 2,
                    gamma: 0.1,
                    lr: 1e-4,
                },
            ],
        };
        assert!(s.validate().is_ok());
        assert_eq!(s.total_iters(), 6);
    }

    #[test]
    fn make_batch_sigma_zero_copies_x() {
        let sampler = Sampler::new(&laplace_unit()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (xs, ys) = make_batch(&sampler, 0.0, 16, &mut rng);
        assert_eq!(xs, ys);
    }

    #[test]
    fn make_batch_deterministic() {
        let sampler = Sampler::new(&laplace_unit()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let (x1, y1) = make_batch(&sampler, 1.0, 8, &mut r1);
        let (x2, y2) = make_batch(&sampler, 1.0, 8, &mut r2);
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn laplace_moments() {
        let sampler = Sampler::new(&laplace_unit()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 1_000_000usize;
        let (xs, _) = make_batch(&sampler, 0.0, n, &mut rng);
        let mean = xs.row(0).sum() / n as f64;
        let var = xs.row(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "Laplace(0,1) mean off: {mean}");
        assert!((var - 2.0).abs() < 0.05, "Laplace(0,1) variance off: {var}");
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 3, InitScheme::ExpGaussian);
        let before = params.layers[0].wy[(0, 0)];
        let mut grad = ParamGrad::zeros(&arch);
        grad.layers[0].wy[(0, 0)] = 0.37;
        let mut adam = AdamState::new(&arch, AdamHyper::default());
        adam_step(&mut adam, &mut params, &grad, 1e-2);
        let delta = params.layers[0].wy[(0, 0)] - before;
        // t=1: m_hat = g, v_hat = g^2, so delta = -lr g / (|g| + eps).
        assert_relative_eq!(delta, -1e-2 * 0.37 / (0.37 + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 3, InitScheme::ExpGaussian);
        let reference = params.clone();
        let grad = ParamGrad::zeros(&arch);
        let mut adam = AdamState::new(&arch, AdamHyper::default());
        adam_step(&mut adam, &mut params, &grad, 1e-2);
        assert_eq!(params, reference);
    }

    #[test]
    fn adam_step_respects_nonnegativity() {
        let arch = tiny_arch();
        let mut params = init_params(&arch, 5, InitScheme::Gaussian);
        let mut grad = ParamGrad::zeros(&arch);
        // Push a constrained weight hard toward negative territory.
        grad.layers[1].wz[(0, 0)] = 10.0;
        let mut adam = AdamState::new(&arch, AdamHyper::default());
        for _ in 0..5 {
            adam_step(&mut adam, &mut params, &grad, 0.5);
        }
        assert!(min_constrained_entry(&params) >= 0.0);
    }

    #[test]
    fn empty_config_returns_init() {
        let arch = tiny_arch();
        let config = TrainConfig {
            sigma: 1.0,
            batch_size: 4,
            pretrain: vec![],
            pretrain_loss: PretrainLoss::L1,
            schedule: GammaSchedule::default(),
            seed: 11,
            loss_form: LossForm::Unnormalized,
            init_scheme: InitScheme::ExpGaussian,
            init_scale: 1.0,
        adam: AdamHyper::default(),
        };
        let out = train(&arch, &config, &laplace_unit()).unwrap();
        assert_eq!(out.params, init_params(&arch, 11, InitScheme::ExpGaussian));
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_keeps_weights_nonnegative() {
        let arch = tiny_arch();
        let config = TrainConfig {
            sigma: 1.0,
            batch_size: 8,
            pretrain: vec![LrStage { iters: 20, lr: 1e-3 }],
            pretrain_loss: PretrainLoss::L1,
            schedule: GammaSchedule {
                stages: vec![PmStage {
                    iters: 20,
                    gamma: 0.5,
                    lr: 1e-3,
                }],
            },
            seed: 4,
            loss_form: LossForm::Unnormalized,
            init_scheme: InitScheme::ExpGaussian,
            init_scale: 1.0,
        adam: AdamHyper::default(),
        };
        let a = train(&arch, &config, &laplace_unit()).unwrap();
        let b = train(&arch, &config, &laplace_unit()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(min_constrained_entry(&a.params) >= 0.0);
        assert!(a.log.iter().all(|r| r.loss.is_finite()));
        assert_eq!(a.log.len(), 40);
        // Stage bookkeeping.
        assert_eq!(a.log[0].stage, "pretrain-1");
        assert_eq!(a.log[0].gamma, None);
        assert_eq!(a.log[39].stage, "pm-1");
        assert_eq!(a.log[39].gamma, Some(0.5));
    }
}
