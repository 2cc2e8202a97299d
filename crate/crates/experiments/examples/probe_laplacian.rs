use std::time::Instant;

use lpn_experiments::laplacian::{run_laplacian, LaplacianSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mode = args.get(2).map(|s| s.as_str()).unwrap_or("compact");
    let mut spec = match mode {
        "paper" => LaplacianSpec::paper_config(seed),
        _ => LaplacianSpec::compact_config(seed),
    };
    if let Some(batch) = args.get(3) {
        spec.batch_size = batch.parse().unwrap();
    }
    if let Some(pre) = args.get(4) {
        let iters: usize = pre.parse().unwrap();
        for s in spec.pretrain.iter_mut() {
            s.iters = iters;
        }
    }
    if let Some(div) = args.get(5) {
        spec.schedule = lpn_experiments::laplacian::table_schedule(div.parse().unwrap());
    }
    let out_dir = args.get(6).map(std::path::PathBuf::from);
    eprintln!(
        "seed {seed} mode {mode}: batch {}, pretrain {:?}, schedule total {}",
        spec.batch_size,
        spec.pretrain,
        spec.schedule.total_iters()
    );
    let t0 = Instant::now();
    let outcome = run_laplacian(&spec, out_dir.as_deref()).unwrap();
    eprintln!("total time: {:.1}s", t0.elapsed().as_secs_f64());
    eprintln!("{:#?}", outcome.metrics);
    let n_unconverged = outcome
        .pm
        .inversion_converged
        .iter()
        .filter(|&&c| !c)
        .count();
    eprintln!("pm prior inversions not converged: {n_unconverged}");
}
