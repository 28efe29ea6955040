//! Reference points for the estimation gap: the Bayes accuracy of the
//! drawn labels and the accuracy of a net trained on the generator's
//! true cores (skipping the decomposition).

use dctnn_core::decomp::Structure;
use dctnn_core::network::{self, NetConfig};
use dctnn_core::pipeline::FitOptions;
use dctnn_core::simgen::{gen_dataset, SimConfig, Split};
use dctnn_core::tensor::DenseTensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    for regime in [Structure::Tucker, Structure::Cp] {
        for seed in 1..=2u64 {
            let cfg = match regime {
                Structure::Tucker => SimConfig::tucker(seed),
                Structure::Cp => SimConfig::cp(seed),
            }
            .with_n(n);
            let ds = gen_dataset(&cfg).unwrap();

            // Realized Bayes accuracy: the oracle thresholded at 1/2.
            let bayes = |split: Split| -> f64 {
                let idx = ds.indices(split);
                let hits = idx
                    .iter()
                    .filter(|&&i| (ds.samples[i].true_pi > 0.5) == (ds.samples[i].y == 1))
                    .count();
                hits as f64 / idx.len() as f64
            };

            // Net trained on the generator's true cores; the selector
            // still runs on the raw covariate as usual.
            let opts = FitOptions::new(regime);
            let train_cores: Vec<DenseTensor> = ds
                .indices(Split::Train)
                .iter()
                .map(|&i| ds.samples[i].true_core.clone())
                .collect();
            let xs = ds.xs(Split::Train);
            let ys = ds.ys(Split::Train);
            let mean = DenseTensor::zeros(&cfg.dims);
            let net_config = NetConfig::classifier(
                train_cores[0].shape().to_vec(),
                opts.ref_shape.clone(),
                cfg.dims.clone(),
                opts.depth,
            );
            let mut tc = opts.train.clone();
            tc.epochs = epochs;
            tc.seed = seed.wrapping_add(7);
            let (net, _) =
                network::train(net_config, &train_cores, &xs, &ys, &mean, &tc).unwrap();

            let acc = |split: Split| -> f64 {
                let idx = ds.indices(split);
                let hits = idx
                    .iter()
                    .filter(|&&i| {
                        let s = &ds.samples[i];
                        let p = net.forward(&s.true_core, &s.x, &mean).unwrap().output;
                        (p > 0.5) == (s.y == 1)
                    })
                    .count();
                hits as f64 / idx.len() as f64
            };
            // Core-only ceiling: Monte Carlo over refinement redraws of
            // the labeler's probability, thresholded at 1/2.
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut mc_rng = ChaCha8Rng::seed_from_u64(999);
            let truth_mats = ds.truth.matrices().to_vec();
            let ceiling = {
                let idx = ds.indices(Split::Test);
                let mut hits = 0usize;
                for &i in idx {
                    let s = &ds.samples[i];
                    // Rebuild the signal at the support for this core.
                    let mut signal = match regime {
                        Structure::Tucker => {
                            let mut t = s.true_core.clone();
                            for (m, u) in truth_mats.iter().enumerate() {
                                t = t.mode_product(u, m).unwrap();
                            }
                            t
                        }
                        Structure::Cp => {
                            let mut t = DenseTensor::zeros(&cfg.dims);
                            for (r, &c) in s.true_core.data().iter().enumerate() {
                                let cols: Vec<Vec<f64>> =
                                    truth_mats.iter().map(|a| a.col(r)).collect();
                                let slices: Vec<&[f64]> =
                                    cols.iter().map(|v| v.as_slice()).collect();
                                t.axpy_in_place(c, &DenseTensor::outer_rank1(&slices))
                                    .unwrap();
                            }
                            t
                        }
                    };
                    let support_vals: Vec<f64> = ds
                        .support
                        .iter()
                        .map(|&j| signal.data()[j])
                        .collect();
                    signal.scale_in_place(1.0);
                    let mut pbar = 0.0;
                    let draws = 48;
                    for _ in 0..draws {
                        let vals: Vec<f64> = support_vals
                            .iter()
                            .map(|sv| {
                                let sign = if mc_rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
                                let scale = mc_rng.gen_range(5.0..8.0);
                                sign * scale * sv.abs()
                            })
                            .collect();
                        let u_d = DenseTensor::from_vec(&cfg.refinement_shape, vals);
                        let z = ds
                            .labeler
                            .forward_parts(&s.true_core, &u_d)
                            .unwrap()
                            .logit;
                        pbar += 1.0 / (1.0 + (-z).exp());
                    }
                    pbar /= draws as f64;
                    if (pbar > 0.5) == (s.y == 1) {
                        hits += 1;
                    }
                }
                hits as f64 / idx.len() as f64
            };
            println!(
                "{regime} seed {seed}: bayes(test) {:.3} core-only ceiling {:.3} | oracle-core net: train {:.3} test {:.3}",
                bayes(Split::Test),
                ceiling,
                acc(Split::Train),
                acc(Split::Test),
            );
        }
    }
}
