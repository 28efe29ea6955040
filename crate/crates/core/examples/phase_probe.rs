//! Phase timing: decomposition fit vs projection vs network training.

use dctnn_core::decomp::{self, DecompModel, Structure};
use dctnn_core::network::{self, NetConfig};
use dctnn_core::pipeline::FitOptions;
use dctnn_core::simgen::{gen_dataset, SimConfig, Split};
use dctnn_core::tensor::DenseTensor;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);

    let cfg = SimConfig::tucker(1).with_n(n);
    let t = Instant::now();
    let ds = gen_dataset(&cfg).unwrap();
    println!("gen: {:.2}s", t.elapsed().as_secs_f64());

    let opts = FitOptions::new(Structure::Tucker);
    let train_xs: Vec<DenseTensor> = ds.xs(Split::Train).into_iter().cloned().collect();

    let t = Instant::now();
    let fit = decomp::fit_tucker(&train_xs, &opts.tucker_ranks, opts.hooi_iters, opts.decomp_tol)
        .unwrap();
    println!(
        "tucker decomp: {:.2}s ({} hooi iters)",
        t.elapsed().as_secs_f64(),
        fit.iterations
    );
    let model = DecompModel::Tucker(fit.model);

    let t = Instant::now();
    let cores = model.project_batch(&train_xs).unwrap();
    println!("project: {:.2}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let net_config = NetConfig::classifier(
        model.core_shape(),
        opts.ref_shape.clone(),
        vec![32, 32, 32],
        opts.depth,
    );
    let xs_refs = ds.xs(Split::Train);
    let ys = ds.ys(Split::Train);
    let mut tc = opts.train.clone();
    tc.epochs = epochs;
    let (_net, _hist) =
        network::train(net_config, &cores.cores, &xs_refs, &ys, model.train_mean(), &tc).unwrap();
    println!("train {epochs} epochs: {:.2}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let cp = decomp::fit_cp(&train_xs, opts.cp_rank, opts.als_iters, opts.decomp_tol, 0).unwrap();
    println!(
        "cp decomp: {:.2}s ({} sweeps)",
        t.elapsed().as_secs_f64(),
        cp.sweeps
    );
}
