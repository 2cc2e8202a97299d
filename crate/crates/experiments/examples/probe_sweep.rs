use lpn_experiments::sweep::{run_prior_sweep, PriorSweepSpec};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let spec = PriorSweepSpec::toy_config(seed);
    let t0 = Instant::now();
    let outcome = run_prior_sweep(&spec, None).unwrap();
    println!(
        "seed {seed}: {:.0}s  converged {}",
        t0.elapsed().as_secs_f64(),
        outcome.metrics.all_inversions_converged
    );
    println!(
        "noise curve: {:?}",
        outcome
            .metrics
            .mean_prior_by_noise
            .iter()
            .map(|v| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    println!("lambda_at_max: {}", outcome.metrics.lambda_at_max);
    println!(
        "lambda curve: {:?}",
        outcome
            .metrics
            .mean_prior_by_lambda
            .iter()
            .map(|v| (v * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
}
