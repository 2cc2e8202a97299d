use nalgebra::DVector;

use lpn_core::icnn::{lpn_forward, IcnnArch, InitScheme};
use lpn_core::loss::LossForm;
use lpn_core::training::{
    train, AdamHyper, GammaSchedule, LrStage, PretrainLoss, TrainConfig,
};
use lpn_experiments::analytic::laplace_posterior_mean;
use lpn_experiments::sources::laplace_unit_1d;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let iters1: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let iters2: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let init: &str = args.get(4).map(|s| s.as_str()).unwrap_or("gaussian");
    let loss: &str = args.get(5).map(|s| s.as_str()).unwrap_or("l2");

    let arch = IcnnArch::new(1, vec![50, 50, 50, 50], 0.01, 10.0).unwrap();
    let config = TrainConfig {
        sigma: 1.0,
        batch_size: batch,
        pretrain: vec![
            LrStage { iters: iters1, lr: 1e-3 },
            LrStage { iters: iters2, lr: 1e-4 },
        ],
        pretrain_loss: if loss == "l1" { PretrainLoss::L1 } else { PretrainLoss::L2 },
        schedule: GammaSchedule::default(),
        seed: 0,
        loss_form: LossForm::Unnormalized,
        init_scheme: if init == "exp" { InitScheme::ExpGaussian } else { InitScheme::Gaussian },
        init_scale: 1.0,
        adam: AdamHyper::default(),
    };
    let t0 = std::time::Instant::now();
    let out = train(&arch, &config, &laplace_unit_1d()).unwrap();
    let dt = t0.elapsed().as_secs_f64();

    let grid: Vec<f64> = (0..121).map(|i| -3.0 + 6.0 * i as f64 / 120.0).collect();
    let mut mae = 0.0;
    let mut samples = Vec::new();
    for &y in &grid {
        let f = lpn_forward(&out.params, &arch, &DVector::from_vec(vec![y])).unwrap()[0];
        let target = laplace_posterior_mean(y, 1.0).unwrap();
        mae += (f - target).abs();
        if (y * 2.0).fract() == 0.0 && y >= 0.0 {
            samples.push((y, f, target));
        }
    }
    mae /= grid.len() as f64;
    let tail_loss: f64 =
        out.log.iter().rev().take(200).map(|r| r.loss).sum::<f64>() / 200.0;
    let mid_loss: f64 = out
        .log
        .iter()
        .skip(out.log.len() / 2)
        .take(200)
        .map(|r| r.loss)
        .sum::<f64>()
        / 200.0;
    println!("batch {batch} iters {iters1}+{iters2} init {init} loss {loss}: {dt:.0}s");
    println!("  MAE to posterior mean: {mae:.4}");
    println!("  mean loss mid {mid_loss:.5} tail {tail_loss:.5}");
    for (y, f, t) in samples {
        println!("  y={y:+.1}  f={f:+.4}  E[x|y]={t:+.4}");
    }
}
