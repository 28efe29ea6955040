//! Generalization sweep for the network stage: epochs, hidden widths,
//! layer-norm toggle, against fixed decompositions.

use dctnn_core::decomp::{self, DecompModel, Structure};
use dctnn_core::network::{self, NetConfig};
use dctnn_core::pipeline::FitOptions;
use dctnn_core::simgen::{gen_dataset, SimConfig, Split};
use dctnn_core::tensor::DenseTensor;

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
    let ds = gen_dataset(&cfg).unwrap();
    let opts = FitOptions::new(regime);
    let train_xs: Vec<DenseTensor> = ds.xs(Split::Train).into_iter().cloned().collect();
    let model = match regime {
        Structure::Tucker => DecompModel::Tucker(
            decomp::fit_tucker(&train_xs, &opts.tucker_ranks, opts.hooi_iters, opts.decomp_tol)
                .unwrap()
                .model,
        ),
        Structure::Cp => DecompModel::Cp(
            decomp::fit_cp(&train_xs, opts.cp_rank, opts.als_iters, opts.decomp_tol, 0)
                .unwrap()
                .model,
        ),
    };
    let cores = model.project_batch(&train_xs).unwrap();
    let xs = ds.xs(Split::Train);
    let ys = ds.ys(Split::Train);

    let eval = |net: &network::DualChannelNet| -> (f64, f64) {
        let acc = |split: Split| -> f64 {
            let idx = ds.indices(split);
            let hits = idx
                .iter()
                .filter(|&&i| {
                    let s = &ds.samples[i];
                    let p = network::predict_proba(net, &model, &s.x).unwrap();
                    (p > 0.5) == (s.y == 1)
                })
                .count();
            hits as f64 / idx.len() as f64
        };
        (acc(Split::Train), acc(Split::Test))
    };

    let core_shape = model.core_shape();
    let variants: Vec<(&str, Vec<usize>, f64)> = vec![
        ("hid=in V=3", core_shape.clone(), 3.0),
        ("hid=in V=5", core_shape.clone(), 5.0),
        ("hid=in V=8", core_shape.clone(), 8.0),
    ];
    for (label, hidden, trunc) in variants {
        for epochs in [16usize, 40, 80] {
            let mut net_config = NetConfig::classifier(
                core_shape.clone(),
                opts.ref_shape.clone(),
                cfg.dims.clone(),
                opts.depth,
            );
            net_config.core_hidden = hidden.clone();
            net_config.truncation = trunc;
            let mut tc = opts.train.clone();
            tc.epochs = epochs;
            tc.seed = seed.wrapping_add(7);
            let t = std::time::Instant::now();
            let (net, _) =
                network::train(net_config, &cores.cores, &xs, &ys, model.train_mean(), &tc)
                    .unwrap();
            let (tr, te) = eval(&net);
            println!(
                "{regime} {label} epochs={epochs}: {:.0}s train {tr:.3} test {te:.3}",
                t.elapsed().as_secs_f64()
            );
        }
    }
}
