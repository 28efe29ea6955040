//! Test-accuracy trajectory across epoch budgets at full scale.

use dctnn_core::decomp::Structure;
use dctnn_core::pipeline::{evaluate, fit_on_dataset, FitOptions};
use dctnn_core::simgen::{gen_dataset, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let regime = match args.get(3).map(|s| s.as_str()) {
        Some("cp") => Structure::Cp,
        _ => Structure::Tucker,
    };

    let cfg = match regime {
        Structure::Tucker => SimConfig::tucker(seed),
        Structure::Cp => SimConfig::cp(seed),
    }
    .with_n(n);
    let ds = gen_dataset(&cfg).expect("generation");

    for epochs in [10usize, 20, 40, 80] {
        for structure in [Structure::Tucker, Structure::Cp] {
            let mut opts = FitOptions::new(structure);
            opts.train.epochs = epochs;
            opts.train.seed = seed.wrapping_add(7);
            let t = std::time::Instant::now();
            let fitted = fit_on_dataset(&ds, &opts).expect("fit");
            let m = evaluate(&fitted, &ds).expect("eval");
            println!(
                "{regime}-data {structure}-fit epochs={epochs}: {:.1}s train {:.3} test {:.3}",
                t.elapsed().as_secs_f64(),
                m.train_accuracy,
                m.test_accuracy
            );
        }
    }
}
