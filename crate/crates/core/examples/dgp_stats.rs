//! Quick look at the data-generating process summary statistics.

use dctnn_core::decomp::Structure;
use dctnn_core::simgen::{gen_dataset, SimConfig};

fn main() {
    for regime in [Structure::Tucker, Structure::Cp] {
        for seed in 1..=5u64 {
            let cfg = match regime {
                Structure::Tucker => SimConfig::tucker(seed),
                Structure::Cp => SimConfig::cp(seed),
            };
            let t0 = std::time::Instant::now();
            let ds = gen_dataset(&cfg).expect("generation");
            let stat = |label: u8| -> (f64, f64, f64, f64) {
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
                let n = zs.len() as f64;
                let mz = zs.iter().sum::<f64>() / n;
                let sz = (zs.iter().map(|z| (z - mz) * (z - mz)).sum::<f64>() / n).sqrt();
                let mp = pis.iter().sum::<f64>() / n;
                let sp = (pis.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>() / n).sqrt();
                (mz, sz, mp, sp)
            };
            let (z1, sz1, p1, sp1) = stat(1);
            let (z0, sz0, p0, sp0) = stat(0);
            println!(
                "{regime} seed {seed}: z|1 = {z1:.3} ({sz1:.3})  z|0 = {z0:.3} ({sz0:.3})  \
                 pi|1 = {p1:.3} ({sp1:.3})  pi|0 = {p0:.3} ({sp0:.3})  \
                 candidates = {} [{:.1}s]",
                ds.candidates_drawn,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
