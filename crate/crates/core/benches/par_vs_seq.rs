//! Data-parallel batched maps against an explicit sequential loop.
//!
//! With the default `parallel` feature the library paths fan out over
//! rayon; built with `--no-default-features` they fall back to plain
//! iteration, so both bars coincide. Either way the results are
//! bit-identical, which the parity check asserts before measuring.

use criterion::{criterion_group, criterion_main, Criterion};
use dctnn_core::decomp::{fit_tucker, DecompModel};
use dctnn_core::network::{predict_batch, predict_with_latent, DualChannelNet, NetConfig};
use dctnn_core::tensor::DenseTensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::hint::black_box;

struct Setup {
    samples: Vec<DenseTensor>,
    model: DecompModel,
    net: DualChannelNet,
}

fn setup() -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dims = [16usize, 16, 16];
    let samples: Vec<DenseTensor> = (0..256)
        .map(|_| DenseTensor::from_fn(&dims, |_| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let fit = fit_tucker(&samples, &[3, 3, 3], 2, 1e-6).unwrap();
    let model = DecompModel::Tucker(fit.model);
    let config = NetConfig::classifier(vec![3, 3, 3], vec![2, 2], dims.to_vec(), 2);
    let net = DualChannelNet::init(config, &mut rng);
    Setup {
        samples,
        model,
        net,
    }
}

fn bench_batches(c: &mut Criterion) {
    let s = setup();
    let refs: Vec<&DenseTensor> = s.samples.iter().collect();

    // The data-parallel path must agree with the sequential loop bit for
    // bit before it is worth timing.
    let par: Vec<f64> = predict_batch(&s.net, &s.model, &refs)
        .unwrap()
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let seq: Vec<f64> = refs
        .iter()
        .map(|x| predict_with_latent(&s.net, &s.model, x).unwrap().0)
        .collect();
    assert_eq!(par, seq, "parallel and sequential predictions diverge");

    let mut group = c.benchmark_group("batch_predict");
    group.sample_size(10);
    group.bench_function("parallel_map", |b| {
        b.iter(|| black_box(predict_batch(&s.net, &s.model, black_box(&refs)).unwrap()))
    });
    group.bench_function("sequential_loop", |b| {
        b.iter(|| {
            let out: Vec<f64> = refs
                .iter()
                .map(|x| predict_with_latent(&s.net, &s.model, x).unwrap().0)
                .collect();
            black_box(out)
        })
    });
    group.finish();

    let mut group = c.benchmark_group("batch_project");
    group.sample_size(10);
    group.bench_function("parallel_map", |b| {
        b.iter(|| black_box(s.model.project_batch(black_box(&s.samples)).unwrap()))
    });
    group.bench_function("sequential_loop", |b| {
        b.iter(|| {
            let out: Vec<DenseTensor> = s
                .samples
                .iter()
                .map(|x| s.model.project(x).unwrap())
                .collect();
            black_box(out)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
