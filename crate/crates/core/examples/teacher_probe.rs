//! Teacher-smoothness probe: labeler bias spread vs student accuracy.

use dctnn_core::decomp::Structure;
use dctnn_core::pipeline::{evaluate, fit_on_dataset, FitOptions};
use dctnn_core::simgen::{gen_dataset, SimConfig, Split};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bias: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let regime = match args.get(3).map(|s| s.as_str()) {
        Some("cp") => Structure::Cp,
        _ => Structure::Tucker,
    };
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);

    let mut cfg = match regime {
        Structure::Tucker => SimConfig::tucker(seed),
        Structure::Cp => SimConfig::cp(seed),
    };
    cfg.labeler_bias = bias;
    let ds = gen_dataset(&cfg).unwrap();

    let bayes = {
        let idx = ds.indices(Split::Test);
        idx.iter()
            .filter(|&&i| (ds.samples[i].true_pi > 0.5) == (ds.samples[i].y == 1))
            .count() as f64
            / idx.len() as f64
    };
    let stat = |label: u8| -> (f64, f64) {
        let zs: Vec<f64> = ds
            .samples
            .iter()
            .filter(|s| s.y == label)
            .map(|s| s.true_z)
            .collect();
        let pis: Vec<f64> = ds
            .samples
            .iter()
            .filter(|s| s.y == label)
            .map(|s| s.true_pi)
            .collect();
        (
            zs.iter().sum::<f64>() / zs.len() as f64,
            pis.iter().sum::<f64>() / pis.len() as f64,
        )
    };
    let (z1, p1) = stat(1);

    let mut opts = FitOptions::new(regime);
    opts.train.epochs = epochs;
    opts.train.seed = seed.wrapping_add(7);
    let fitted = fit_on_dataset(&ds, &opts).unwrap();
    let m = evaluate(&fitted, &ds).unwrap();
    println!(
        "{regime} seed {seed} bias {bias}: bayes {bayes:.3} z1 {z1:.2} pi1 {p1:.3} | \
         student train {:.3} test {:.3}",
        m.train_accuracy, m.test_accuracy
    );
}
