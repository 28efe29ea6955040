//! Timing and accuracy probe for the two-stage fit at full scale.

use dctnn_core::decomp::Structure;
use dctnn_core::pipeline::{evaluate, fit_on_dataset, FitOptions};
use dctnn_core::simgen::{gen_dataset, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    for regime in [Structure::Tucker, Structure::Cp] {
        let cfg = match regime {
            Structure::Tucker => SimConfig::tucker(seed),
            Structure::Cp => SimConfig::cp(seed),
        }
        .with_n(n);
        let t0 = std::time::Instant::now();
        let ds = gen_dataset(&cfg).expect("generation");
        let t_gen = t0.elapsed().as_secs_f64();

        for structure in [Structure::Tucker, Structure::Cp] {
            let mut opts = FitOptions::new(structure);
            opts.train.epochs = epochs;
            opts.train.seed = seed.wrapping_add(7);
            let t1 = std::time::Instant::now();
            let fitted = fit_on_dataset(&ds, &opts).expect("fit");
            let t_fit = t1.elapsed().as_secs_f64();
            let m = evaluate(&fitted, &ds).expect("eval");
            let sel = fitted.net.selector.as_ref().unwrap();
            let active = sel
                .data()
                .iter()
                .filter(|w| w.abs() >= opts.train.tau)
                .count();
            println!(
                "{regime}-data {structure}-fit n={n} epochs={epochs}: \
                 gen {t_gen:.1}s fit {t_fit:.1}s | train acc {:.3} test acc {:.3} mse {:.3} \
                 pi1(test) {:.3} pi0(test) {:.3} | selector >= tau: {active}",
                m.train_accuracy, m.test_accuracy, m.test_mse, m.pi_test_y1, m.pi_test_y0
            );
        }
    }
}
