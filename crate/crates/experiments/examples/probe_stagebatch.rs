use nalgebra::DVector;
use std::time::Instant;

use lpn_core::icnn::{lpn_forward, IcnnArch, InitScheme};
use lpn_core::loss::LossForm;
use lpn_core::training::{
    train, train_from, AdamHyper, GammaSchedule, LrStage, PmStage, PretrainLoss, TrainConfig,
};
use lpn_experiments::analytic::soft_threshold;
use lpn_experiments::sources::laplace_unit_1d;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let base_batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(512);
    let tail_batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let pre: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8000);
    let init_scale: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let beta2: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.999);

    let arch = IcnnArch::new(1, vec![50, 50, 50, 50], 0.01, 10.0).unwrap();
    let source = laplace_unit_1d();
    let t0 = Instant::now();

    let config = |batch: usize, pretrain: Vec<LrStage>, stages: Vec<PmStage>, seed: u64| TrainConfig {
        sigma: 1.0,
        batch_size: batch,
        pretrain,
        pretrain_loss: PretrainLoss::L1,
        schedule: GammaSchedule { stages },
        seed,
        loss_form: LossForm::Unnormalized,
        init_scheme: InitScheme::Gaussian,
        init_scale,
        adam: AdamHyper {
            beta2,
            ..AdamHyper::default()
        },
    };

    // l1 pretrain
    let l1 = train(
        &arch,
        &config(
            base_batch,
            vec![
                LrStage { iters: pre, lr: 1e-3 },
                LrStage { iters: pre, lr: 1e-4 },
            ],
            vec![],
            seed,
        ),
        &source,
    )
    .unwrap();
    eprintln!("pretrain done {:.0}s", t0.elapsed().as_secs_f64());

    // PM head stages at base batch
    let head = [
        (2000, 0.5, 1e-3),
        (2000, 0.5, 1e-4),
        (4000, 0.4, 1e-4),
        (4000, 0.3, 1e-4),
    ]
    .iter()
    .map(|&(iters, gamma, lr)| PmStage { iters, gamma, lr })
    .collect();
    let mid = train_from(
        l1.params,
        &arch,
        &config(base_batch, vec![], head, seed ^ 101),
        &source,
    )
    .unwrap();
    eprintln!("pm head done {:.0}s", t0.elapsed().as_secs_f64());

    let report = |label: &str, params: &lpn_core::icnn::IcnnParams| {
        let mut sup = 0.0f64;
        for i in 0..121 {
            let x = -3.0 + 6.0 * i as f64 / 120.0;
            let f = lpn_forward(params, &arch, &DVector::from_vec(vec![x])).unwrap()[0];
            sup = sup.max((f - soft_threshold(x, 1.0)).abs());
        }
        eprintln!("{label}: sup to soft = {sup:.4}");
    };
    report("after gamma .3 stage", &mid.params);

    // Remaining stages, each at its own batch size ("b5,b6,b7" in arg 5,
    // falling back to the tail batch).
    let tail_batches: Vec<usize> = args
        .get(5)
        .map(|s| s.split(',').map(|t| t.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![tail_batch; 3]);
    let mut params = mid.params;
    for (i, &(iters, gamma, lr)) in [
        (4000usize, 0.2, 1e-5),
        (4000, 0.1, 1e-5),
        (4000, 0.1, 1e-6),
    ]
    .iter()
    .enumerate()
    {
        params = train_from(
            params,
            &arch,
            &config(
                tail_batches[i],
                vec![],
                vec![PmStage { iters, gamma, lr }],
                seed ^ (202 + i as u64),
            ),
            &source,
        )
        .unwrap()
        .params;
        eprintln!(
            "stage gamma={gamma} lr={lr} batch={} done {:.0}s",
            tail_batches[i],
            t0.elapsed().as_secs_f64()
        );
        report(&format!("after gamma={gamma} lr={lr}"), &params);
    }
}
