use nalgebra::DVector;
use std::time::Instant;

use lpn_core::icnn::{IcnnArch, IcnnParams};
use lpn_core::operators::{op_norm_sq, OperatorSpec};
use lpn_core::pnp::{admm_solve, kkt_residuals, pgd_objective_trace, pgd_solve, PnpConfig};
use lpn_experiments::inverse::{make_measurement, solve_instance, train_toy_denoiser, SolverKind};
use lpn_experiments::metrics::psnr;

fn main() {
    let t0 = Instant::now();
    let dim = 64usize;
    let denoiser = train_toy_denoiser(dim, 0.05, 7).unwrap();
    println!("denoiser trained: {:.0}s", t0.elapsed().as_secs_f64());

    // --- Criterion 6 setup: 5-tap blur deblurring via ADMM ---
    let blur = OperatorSpec::Blur {
        kernel: vec![0.0625, 0.25, 0.375, 0.25, 0.0625],
        dim,
    }
    .build()
    .unwrap();
    let opn = op_norm_sq(&blur, 200, 0).unwrap().value;
    println!("blur ||A'A|| = {opn}");
    let (x_true, y) = make_measurement(&denoiser.source, &blur, 0.01, 42).unwrap();

    let config = PnpConfig {
        rho: Some(1.1 * opn),
        max_iters: 500,
        fp_tol: 1e-8,
        ..Default::default()
    };
    let x0 = blur.adjoint(&y).unwrap();
    let (x_hat, state) =
        admm_solve(&denoiser.params, &denoiser.arch, &blur, &y, &config, &x0).unwrap();
    println!(
        "ADMM: converged {} in {} iters ({:.0}s)",
        state.converged,
        state.iterations,
        t0.elapsed().as_secs_f64()
    );
    let kkt = kkt_residuals(
        &denoiser.params,
        &denoiser.arch,
        &blur,
        &y,
        &state,
        state.rho.unwrap(),
    )
    .unwrap();
    println!("KKT max {:.3e} (r1 {:.2e} r2 {:.2e} r3 {:.2e})", kkt.max(), kkt.r1, kkt.r2, kkt.r3);
    println!(
        "PSNR(x_hat, x) = {:.2} dB, PSNR(y, x) = {:.2} dB",
        psnr(&x_true, &x_hat, 1.0),
        psnr(&x_true, &y, 1.0)
    );

    // --- Criterion 7: PGD on the same problem ---
    let config_pgd = PnpConfig {
        eta: Some(0.9 / opn),
        max_iters: 2000,
        fp_tol: 1e-9,
        ..Default::default()
    };
    let (x_pgd, state_pgd) =
        pgd_solve(&denoiser.params, &denoiser.arch, &blur, &y, &config_pgd, &x0).unwrap();
    let eta = state_pgd.eta.unwrap();
    let grad = blur.adjoint(&(blur.apply(&x_pgd).unwrap() - &y)).unwrap();
    let fx = lpn_core::icnn::lpn_forward(&denoiser.params, &denoiser.arch, &(&x_pgd - &grad * eta))
        .unwrap();
    println!(
        "PGD: converged {} in {} iters; fixed-point eq residual {:.3e}",
        state_pgd.converged,
        state_pgd.iterations,
        (&fx - &x_pgd).norm()
    );
    let trace = pgd_objective_trace(
        &denoiser.params,
        &denoiser.arch,
        &blur,
        &y,
        &state_pgd,
        eta,
        1e-9,
    )
    .unwrap();
    let mut max_increase = 0.0f64;
    for w in trace.windows(2) {
        max_increase = max_increase.max(w[1].objective - w[0].objective);
    }
    println!(
        "objective trace: {} points, max increase {:.3e}, all inversions {} ({:.0}s)",
        trace.len(),
        max_increase,
        trace.iter().all(|p| p.inversion_converged),
        t0.elapsed().as_secs_f64()
    );

    // --- Criterion 9: well-posed CS limit with the identity prox ---
    let arch_id = IcnnArch::new(dim, vec![4], 1.0, 10.0).unwrap();
    let params_id = IcnnParams::zeros(&arch_id);
    for seed in [3u64, 11, 29] {
        let spec = OperatorSpec::GaussianCs {
            rows: dim,
            cols: dim,
            seed,
        };
        let a = spec.build().unwrap();
        let (x_true, y) = make_measurement(&denoiser.source, &a, 0.0, 100 + seed).unwrap();
        // Direct-solve oracle.
        let dense = match &a {
            lpn_core::operators::LinearOperator::Dense { matrix, .. } => matrix.clone(),
            _ => unreachable!(),
        };
        let x_direct = dense.clone().lu().solve(&y).unwrap();
        let cfg = PnpConfig {
            max_iters: 60000,
            fp_tol: 1e-10,
            op_norm_iters: 300,
            record_iterates: false,
            ..Default::default()
        };
        let outcome = solve_instance(
            &params_id,
            &arch_id,
            &a,
            &y,
            &x_true,
            SolverKind::Admm,
            &cfg,
        )
        .unwrap();
        let svd = dense.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "CS seed {seed}: cond(A) {:.1e}, converged {} in {}, PSNR(x_pnp, direct) {:.1} dB, PSNR(x_pnp, x) {:.1} dB ({:.0}s)",
            smax / smin,
            outcome.state.converged,
            outcome.state.iterations,
            psnr(&x_direct, &outcome.x_hat, 1.0),
            outcome.recon.psnr_db,
            t0.elapsed().as_secs_f64()
        );
        let v = (&x_direct - &x_true).norm();
        println!("   |direct - truth| = {v:.2e}");
    }
}
