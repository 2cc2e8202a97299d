//! Prior-perturbation sweeps on a toy multi-modal source: the recovered
//! regularizer evaluated at increasingly noisy samples and along convex
//! combinations of samples from different modes.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use lpn_core::error::Result;
use lpn_core::icnn::{IcnnArch, IcnnParams, InitScheme};
use lpn_core::loss::LossForm;
use lpn_core::prior::eval_prior_curve;
use lpn_core::training::{
    make_batch, train, AdamHyper, DataSource, GammaSchedule, LogRow, LrStage, PmStage,
    PretrainLoss, Sampler, TrainConfig,
};

use crate::csvio;
use crate::sources::two_component_mixture;

#[derive(Debug, Clone, Serialize)]
pub struct PriorSweepSpec {
    pub dim: usize,
    pub mode_offset: f64,
    pub component_std: f64,
    pub hidden_widths: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_train: f64,
    pub batch_size: usize,
    pub pretrain: Vec<LrStage>,
    pub schedule: GammaSchedule,
    pub seed: u64,
    pub noise_levels: Vec<f64>,
    pub lambda_points: usize,
    pub eval_samples: usize,
    pub prior_tol: f64,
}

impl PriorSweepSpec {
    /// Two Gaussian modes at +-0.75 (1, ..., 1) in 8 dimensions; the
    /// annealing starts at 0.64 sqrt(dim) and halves per stage.
    pub fn toy_config(seed: u64) -> Self {
        let dim = 8usize;
        let gamma0 = 0.64 * (dim as f64).sqrt();
        let stages: Vec<PmStage> = [
            (1000, gamma0, 1e-3),
            (1000, gamma0 * 0.5, 1e-3),
            (1000, gamma0 * 0.25, 1e-4),
            (1000, gamma0 * 0.125, 1e-4),
            (1000, gamma0 * 0.0625, 1e-5),
        ]
        .iter()
        .map(|&(iters, gamma, lr)| PmStage { iters, gamma, lr })
        .collect();
        PriorSweepSpec {
            dim,
            mode_offset: 0.75,
            component_std: 0.15,
            hidden_widths: vec![40, 40],
            alpha: 0.01,
            beta: 10.0,
            sigma_train: 0.25,
            batch_size: 128,
            pretrain: vec![LrStage {
                iters: 2000,
                lr: 1e-3,
            }],
            schedule: GammaSchedule { stages },
            seed,
            noise_levels: vec![0.0, 0.1, 0.2, 0.4],
            lambda_points: 21,
            eval_samples: 16,
            prior_tol: 1e-8,
        }
    }

    pub fn arch(&self) -> Result<IcnnArch> {
        IcnnArch::new(self.dim, self.hidden_widths.clone(), self.alpha, self.beta)
    }

    pub fn source(&self) -> DataSource {
        two_component_mixture(self.dim, self.mode_offset, self.component_std)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetrics {
    pub noise_levels: Vec<f64>,
    /// Mean offset-normalized prior at each noise level.
    pub mean_prior_by_noise: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Mean offset-normalized prior along the convex combination.
    pub mean_prior_by_lambda: Vec<f64>,
    /// Argmax of the combination curve.
    pub lambda_at_max: f64,
    pub all_inversions_converged: bool,
}

pub struct SweepOutcome {
    pub metrics: SweepMetrics,
    pub params: IcnnParams,
    pub log: Vec<LogRow>,
}

/// Train on the mixture and evaluate both perturbation curves.
pub fn run_prior_sweep(spec: &PriorSweepSpec, out_dir: Option<&Path>) -> Result<SweepOutcome> {
    let arch = spec.arch()?;
    let source = spec.source();
    let config = TrainConfig {
        sigma: spec.sigma_train,
        batch_size: spec.batch_size,
        pretrain: spec.pretrain.clone(),
        pretrain_loss: PretrainLoss::L1,
        schedule: spec.schedule.clone(),
        seed: spec.seed,
        loss_form: LossForm::Unnormalized,
        init_scheme: InitScheme::Gaussian,
        init_scale: 1.0,
        adam: AdamHyper::default(),
    };
    let trained = train(&arch, &config, &source)?;

    // Evaluation draws come from a stream disjoint from training.
    let sampler = Sampler::new(&source)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);

    let (clean, _) = make_batch(&sampler, 0.0, spec.eval_samples, &mut rng);

    // Noise sweep: one noise draw per (sample, level), scaled per level.
    let mut noise_points: Vec<DVector<f64>> = Vec::new();
    for j in 0..spec.eval_samples {
        let dir = DVector::from_fn(spec.dim, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        for &sigma in &spec.noise_levels {
            noise_points.push(clean.column(j).into_owned() + &dir * sigma);
        }
    }
    let noise_curve = eval_prior_curve(&trained.params, &arch, &noise_points, spec.prior_tol)?;
    let mut mean_prior_by_noise = vec![0.0; spec.noise_levels.len()];
    for (idx, v) in noise_curve.normalized.iter().enumerate() {
        mean_prior_by_noise[idx % spec.noise_levels.len()] += v;
    }
    for v in mean_prior_by_noise.iter_mut() {
        *v /= spec.eval_samples as f64;
    }

    // Convex combinations between samples of distinct modes.
    let lambdas: Vec<f64> = (0..spec.lambda_points)
        .map(|i| i as f64 / (spec.lambda_points - 1) as f64)
        .collect();
    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    while pairs.len() < spec.eval_samples {
        let (a, _) = make_batch(&sampler, 0.0, 1, &mut rng);
        let (b, _) = make_batch(&sampler, 0.0, 1, &mut rng);
        let a = a.column(0).into_owned();
        let b = b.column(0).into_owned();
        // Keep only pairs straddling the two modes.
        if a.sum() * b.sum() < 0.0 {
            let (plus, minus) = if a.sum() > 0.0 { (a, b) } else { (b, a) };
            pairs.push((plus, minus));
        }
    }
    let mut combo_points: Vec<DVector<f64>> = Vec::new();
    for (xp, xm) in &pairs {
        for &lam in &lambdas {
            combo_points.push(xp * (1.0 - lam) + xm * lam);
        }
    }
    let combo_curve = eval_prior_curve(&trained.params, &arch, &combo_points, spec.prior_tol)?;
    let mut mean_prior_by_lambda = vec![0.0; lambdas.len()];
    for (idx, v) in combo_curve.normalized.iter().enumerate() {
        mean_prior_by_lambda[idx % lambdas.len()] += v;
    }
    for v in mean_prior_by_lambda.iter_mut() {
        *v /= pairs.len() as f64;
    }
    let lambda_at_max = lambdas[argmax(&mean_prior_by_lambda)];

    let metrics = SweepMetrics {
        noise_levels: spec.noise_levels.clone(),
        mean_prior_by_noise,
        lambdas: lambdas.clone(),
        mean_prior_by_lambda,
        lambda_at_max,
        all_inversions_converged: noise_curve.all_converged() && combo_curve.all_converged(),
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        csvio::write_columns(
            dir.join("prior_vs_noise.csv"),
            &["sigma", "mean_prior_normalized"],
            &[&metrics.noise_levels, &metrics.mean_prior_by_noise],
        )?;
        csvio::write_columns(
            dir.join("prior_vs_lambda.csv"),
            &["lambda", "mean_prior_normalized"],
            &[&metrics.lambdas, &metrics.mean_prior_by_lambda],
        )?;
        crate::laplacian::write_train_log(dir.join("train_log.csv"), &trained.log)?;
        let summary = serde_json::json!({
            "experiment": "prior_sweep",
            "spec": spec,
            "metrics": metrics,
        });
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }

    Ok(SweepOutcome {
        metrics,
        params: trained.params,
        log: trained.log,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
