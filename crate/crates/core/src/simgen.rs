//! Synthetic data-generating process for the simulation harness.
//!
//! Each covariate is a signal-plus-refinement tensor `X = S(C) + U_S + U_N`:
//! the signal expands a per-sample latent core through either orthonormal
//! Tucker loadings or correlated CP factors (both drawn once per dataset),
//! `U_S` is a sparse refinement supported on a fixed index set `J`, and
//! `U_N` is dense Gaussian nuisance noise. Labels come from a fixed random
//! two-channel ReLU labeler network mapping `(C, U_D)` to a logit, with a
//! per-dataset output scale calibrated so the class-conditional mean
//! probability lands near its reference value. A class-balanced sample is
//! collected by repeated candidate generation and acceptance into class
//! buckets, followed by a stratified train/calibration/test split.
//!
//! Randomness is split into independent substreams (structure, cores,
//! refinement, labeler, acceptance, splits) of one master seed, so the
//! whole dataset is a pure function of its configuration.

use crate::decomp::Structure;
use crate::io::{self, IoError};
use crate::linalg::qr_thin_q;
use crate::network::{DualChannelNet, Link, NetConfig, NetworkError};
use crate::tensor::{dot, DenseTensor, Matrix, TensorError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const STREAM_STRUCTURE: u64 = 0xA1;
const STREAM_CORES: u64 = 0xA2;
const STREAM_REFINEMENT: u64 = 0xA3;
const STREAM_LABELER: u64 = 0xA4;
const STREAM_ACCEPTANCE: u64 = 0xA5;
const STREAM_SPLITS: u64 = 0xA6;
const STREAM_PILOT_CORES: u64 = 0xB2;
const STREAM_PILOT_REFINEMENT: u64 = 0xB3;

/// Reference class-1 mean logits the labeler is calibrated to, one per
/// signal regime.
const LOGIT_TARGET_TUCKER: f64 = 2.542;
const LOGIT_TARGET_CP: f64 = 3.048;
const CANDIDATE_BUDGET: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error(
        "acceptance budget exhausted after {candidates} candidates \
         (class 0: {n0}/{target0}, class 1: {n1}/{target1})"
    )]
    AcceptanceBudget {
        candidates: usize,
        n0: usize,
        target0: usize,
        n1: usize,
        target1: usize,
    },
    #[error("dataset directory is missing or corrupt: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Net(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Full description of one simulated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub dims: Vec<usize>,
    pub n: usize,
    pub regime: Structure,
    pub tucker_ranks: Vec<usize>,
    pub smoothing_bandwidth: f64,
    pub core_norm: f64,
    pub cp_rank: usize,
    pub cp_collinearity: f64,
    pub cp_ar_coeff: f64,
    pub coeff_norm: f64,
    pub support_size: usize,
    pub refinement_scale: (f64, f64),
    pub noise_sigma: f64,
    pub labeler_depth: usize,
    /// Hidden shape of both channels of the ground-truth labeler; empty
    /// means each channel matches its input shape.
    pub labeler_hidden: Vec<usize>,
    /// Half-width of the labeler's uniform bias draw; larger values move
    /// the ReLU kinks outward and smooth the planted logit map.
    pub labeler_bias: f64,
    pub refinement_shape: Vec<usize>,
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SimConfig {
    pub fn tucker(seed: u64) -> Self {
        Self {
            dims: vec![32, 32, 32],
            n: 2000,
            regime: Structure::Tucker,
            tucker_ranks: vec![3, 3, 3],
            smoothing_bandwidth: 1.0,
            core_norm: 5.0,
            cp_rank: 12,
            cp_collinearity: 0.1,
            cp_ar_coeff: 0.7,
            coeff_norm: 8.0,
            support_size: 18,
            refinement_scale: (5.0, 8.0),
            noise_sigma: 0.1,
            labeler_depth: 2,
            labeler_hidden: vec![],
            labeler_bias: 0.1,
            refinement_shape: vec![2, 3, 3],
            split_fractions: (0.6, 0.2, 0.2),
            seed,
        }
    }

    pub fn cp(seed: u64) -> Self {
        Self {
            regime: Structure::Cp,
            ..Self::tucker(seed)
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        let ref_len: usize = self.refinement_shape.iter().product();
        if ref_len != self.support_size {
            return Err(SimError::BadConfig(format!(
                "refinement shape {:?} does not hold {} support entries",
                self.refinement_shape, self.support_size
            )));
        }
        let (a, b, c) = self.split_fractions;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(SimError::BadConfig("split fractions must sum to 1".into()));
        }
        if self.n < 2 {
            return Err(SimError::BadConfig("need n >= 2".into()));
        }
        if self.regime == Structure::Tucker && self.tucker_ranks.len() != self.dims.len() {
            return Err(SimError::BadConfig("one Tucker rank per mode".into()));
        }
        let ambient: usize = self.dims.iter().product();
        if self.support_size > ambient {
            return Err(SimError::BadConfig("support larger than the tensor".into()));
        }
        Ok(())
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// Per-dataset ground-truth structure.
#[derive(Clone, Debug)]
pub enum SimTruth {
    Tucker { loadings: Vec<Matrix> },
    Cp { factors: Vec<Matrix> },
}

impl SimTruth {
    pub fn matrices(&self) -> &[Matrix] {
        match self {
            SimTruth::Tucker { loadings } => loadings,
            SimTruth::Cp { factors } => factors,
        }
    }
}

/// One accepted observation with its oracle quantities.
#[derive(Clone, Debug)]
pub struct SimSample {
    pub x: DenseTensor,
    pub y: u8,
    pub true_pi: f64,
    pub true_z: f64,
    /// Latent core fed to the labeler: the smoothed Tucker core, or the
    /// CP coefficient vector as a one-mode tensor.
    pub true_core: DenseTensor,
    /// Oracle dense refinement (support values in fixed index order).
    pub u_dense: DenseTensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Cal,
    Test,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SimDataset {
    pub config: SimConfig,
    pub samples: Vec<SimSample>,
    pub splits: SplitIndices,
    pub truth: SimTruth,
    /// Support of the sparse refinement as sorted linear indices.
    pub support: Vec<usize>,
    /// Calibrated ground-truth labeler.
    pub labeler: DualChannelNet,
    /// Candidates drawn by the acceptance loop.
    pub candidates_drawn: usize,
}

impl SimDataset {
    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Cal => &self.splits.cal,
            Split::Test => &self.splits.test,
        }
    }

    pub fn xs(&self, split: Split) -> Vec<&DenseTensor> {
        self.indices(split).iter().map(|&i| &self.samples[i].x).collect()
    }

    pub fn ys(&self, split: Split) -> Vec<f64> {
        self.indices(split)
            .iter()
            .map(|&i| self.samples[i].y as f64)
            .collect()
    }

    pub fn oracle_pis(&self, split: Split) -> Vec<f64> {
        self.indices(split)
            .iter()
            .map(|&i| self.samples[i].true_pi)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Signal construction
// ---------------------------------------------------------------------------

/// Orthonormal Tucker loadings: QR of an i.i.d. Uniform[-5, 5] matrix,
/// drawn once per dataset.
pub fn draw_tucker_loadings(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    cfg.dims
        .iter()
        .zip(&cfg.tucker_ranks)
        .map(|(&d, &r)| {
            let raw = Matrix::from_fn(d, r, |_, _| rng.gen_range(-5.0..5.0));
            qr_thin_q(&raw)
        })
        .collect()
}

/// Per-sample Tucker core and signal: i.i.d. Gaussian entries, separable
/// Gaussian kernel smoothing (truncated at radius 2, reflective
/// boundary), rescale to `core_norm`, then expand through the loadings.
pub fn gen_tucker_signal(
    cfg: &SimConfig,
    loadings: &[Matrix],
    rng: &mut ChaCha8Rng,
) -> Result<(DenseTensor, DenseTensor), SimError> {
    let raw = DenseTensor::from_fn(&cfg.tucker_ranks, |_| rng.sample(StandardNormal));
    let mut core = gaussian_smooth(&raw, cfg.smoothing_bandwidth);
    let nrm = core.frobenius_norm();
    if nrm > 0.0 {
        core.scale_in_place(cfg.core_norm / nrm);
    }
    let mut signal = core.clone();
    for (m, u) in loadings.iter().enumerate() {
        signal = signal.mode_product(u, m)?;
    }
    Ok((signal, core))
}

/// Separable truncated-Gaussian smoothing with reflective boundaries.
fn gaussian_smooth(t: &DenseTensor, bandwidth: f64) -> DenseTensor {
    const RADIUS: i64 = 2;
    let mut weights = Vec::new();
    for d in -RADIUS..=RADIUS {
        weights.push((-((d * d) as f64) / (2.0 * bandwidth * bandwidth)).exp());
    }
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }

    let mut cur = t.clone();
    for mode in 0..t.ndim() {
        let n = cur.shape()[mode] as i64;
        let unf = cur.unfold(mode).expect("mode in range");
        let mut out = Matrix::zeros(unf.rows, unf.cols);
        for i in 0..n {
            for (k, &w) in weights.iter().enumerate() {
                let off = k as i64 - RADIUS;
                let mut j = i + off;
                // Symmetric reflection keeps the index in range for
                // radius <= n.
                if j < 0 {
                    j = -j - 1;
                }
                if j >= n {
                    j = 2 * n - j - 1;
                }
                let src = unf.row(j as usize);
                let dst_off = i as usize * out.cols;
                for (c, &v) in src.iter().enumerate() {
                    out.data[dst_off + c] += w * v;
                }
            }
        }
        cur = DenseTensor::fold(&out, mode, cur.shape()).expect("shape preserved");
    }
    cur
}

/// Correlated CP factors: per mode, QR of an i.i.d. Uniform[-5, 5] matrix
/// gives orthonormal columns, then every column r >= 2 is tilted toward
/// the first with mixing weight `eta_r = (theta^{-2/3} - 1)^{1/2}`,
/// `theta = delta / (r - 1)`, and renormalized.
pub fn draw_cp_factors(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    cfg.dims
        .iter()
        .map(|&d| {
            let raw = Matrix::from_fn(d, cfg.cp_rank, |_, _| rng.gen_range(-5.0..5.0));
            let q = qr_thin_q(&raw);
            let first = q.col(0);
            let mut out = Matrix::zeros(d, cfg.cp_rank);
            out.set_col(0, &first);
            for r in 1..cfg.cp_rank {
                let theta = cfg.cp_collinearity / r as f64;
                let eta = (theta.powf(-2.0 / 3.0) - 1.0).sqrt();
                let tilted: Vec<f64> = first
                    .iter()
                    .zip(q.col(r))
                    .map(|(&a, b)| a + eta * b)
                    .collect();
                let nrm = dot(&tilted, &tilted).sqrt();
                let col: Vec<f64> = tilted.iter().map(|x| x / nrm).collect();
                out.set_col(r, &col);
            }
            out
        })
        .collect()
}

/// Stationary AR(1) coefficient draw before rescaling: `c_1 ~ N(0,1)`,
/// `c_r = rho c_{r-1} + sqrt(1 - rho^2) eps_r`.
pub fn ar1_coefficients(rank: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut c = Vec::with_capacity(rank);
    let mut prev: f64 = rng.sample(StandardNormal);
    c.push(prev);
    for _ in 1..rank {
        let eps: f64 = rng.sample(StandardNormal);
        prev = rho * prev + (1.0 - rho * rho).sqrt() * eps;
        c.push(prev);
    }
    c
}

/// Per-sample CP coefficients and signal: AR(1) coefficients rescaled to
/// `coeff_norm`, expanded as a sum of rank-1 outer products.
pub fn gen_cp_signal(
    cfg: &SimConfig,
    factors: &[Matrix],
    rng: &mut ChaCha8Rng,
) -> Result<(DenseTensor, Vec<f64>), SimError> {
    let mut coeffs = ar1_coefficients(cfg.cp_rank, cfg.cp_ar_coeff, rng);
    let nrm = dot(&coeffs, &coeffs).sqrt();
    if nrm > 0.0 {
        for c in &mut coeffs {
            *c *= cfg.coeff_norm / nrm;
        }
    }
    let mut signal = DenseTensor::zeros(&cfg.dims);
    for (r, &c) in coeffs.iter().enumerate() {
        let cols: Vec<Vec<f64>> = factors.iter().map(|a| a.col(r)).collect();
        let slices: Vec<&[f64]> = cols.iter().map(|v| v.as_slice()).collect();
        let rank1 = DenseTensor::outer_rank1(&slices);
        signal.axpy_in_place(c, &rank1)?;
    }
    Ok((signal, coeffs))
}

/// Sparse support drawn once per dataset: uniform without replacement,
/// kept in ascending order (the fixed index order for `U_D`).
pub fn draw_support(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let ambient: usize = cfg.dims.iter().product();
    let mut chosen = Vec::with_capacity(cfg.support_size);
    while chosen.len() < cfg.support_size {
        let idx = rng.gen_range(0..ambient);
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Sparse refinement, nuisance noise, and the dense oracle refinement for
/// one candidate signal: `U_S(j) = xi * a * |S(j)|` on the support with
/// `xi = +-1` and `a ~ Uniform[refinement_scale]`, `U_N` i.i.d. Gaussian.
pub fn gen_refinement(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    signal: &DenseTensor,
    support: &[usize],
) -> (DenseTensor, DenseTensor, DenseTensor) {
    let mut u_s = DenseTensor::zeros(&cfg.dims);
    let mut dense_vals = Vec::with_capacity(support.len());
    let (lo, hi) = cfg.refinement_scale;
    for &j in support {
        let sign = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
        let scale = rng.gen_range(lo..hi);
        let v = sign * scale * signal.data()[j].abs();
        u_s.data_mut()[j] = v;
        dense_vals.push(v);
    }
    let u_n = DenseTensor::from_fn(&cfg.dims, |_| {
        cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let u_d = DenseTensor::from_vec(&cfg.refinement_shape, dense_vals);
    (u_s, u_n, u_d)
}

// ---------------------------------------------------------------------------
// Labeler
// ---------------------------------------------------------------------------

fn labeler_config(cfg: &SimConfig) -> NetConfig {
    let core_in = match cfg.regime {
        Structure::Tucker => cfg.tucker_ranks.clone(),
        Structure::Cp => vec![cfg.cp_rank],
    };
    let core_hidden = if cfg.labeler_hidden.is_empty() {
        core_in.clone()
    } else {
        cfg.labeler_hidden.clone()
    };
    let ref_hidden = if cfg.labeler_hidden.is_empty() {
        cfg.refinement_shape.clone()
    } else {
        cfg.labeler_hidden.clone()
    };
    NetConfig {
        core_hidden,
        core_in,
        ref_hidden,
        ref_in: cfg.refinement_shape.clone(),
        depth: cfg.labeler_depth,
        link: Link::Identity,
        layer_norm: false,
        truncation: f64::INFINITY,
        weight_bound: None,
        selector_dims: None,
        bias_init: cfg.labeler_bias,
    }
}

/// Draw the ground-truth labeler and calibrate it on a pilot draw of
/// 2000 candidates: the pilot logit distribution is centered (so the two
/// classes fill at comparable rates and the class-conditional logits are
/// near-symmetric) and then scaled by bisection so the
/// probability-weighted class-1 mean logit hits the regime's reference
/// value. Both adjustments are folded into the output layer, so callers
/// just read `forward_parts(...).logit`.
pub fn gen_labeler(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<DualChannelNet, SimError> {
    let mut net = DualChannelNet::init(labeler_config(cfg), rng);

    // Pilot logits under the uncalibrated net; only the signal at the
    // support is needed, the nuisance noise never reaches the labeler.
    let mut pilot_cores = cfg.stream(STREAM_PILOT_CORES);
    let mut pilot_ref = cfg.stream(STREAM_PILOT_REFINEMENT);
    let support = draw_support(cfg, &mut cfg.stream(STREAM_REFINEMENT));
    let truth = draw_structure(cfg)?;
    let pilot_n = 2000;
    let mut logits = Vec::with_capacity(pilot_n);
    for _ in 0..pilot_n {
        let (core, support_signal) =
            pilot_candidate(cfg, &truth, &support, &mut pilot_cores)?;
        let u_d = pilot_refinement(cfg, &support_signal, &mut pilot_ref);
        let trace = net.forward_parts(&core, &u_d)?;
        logits.push(trace.logit);
    }

    let center = logits.iter().sum::<f64>() / logits.len() as f64;
    let centered: Vec<f64> = logits.iter().map(|z| z - center).collect();
    let target = match cfg.regime {
        Structure::Tucker => LOGIT_TARGET_TUCKER,
        Structure::Cp => LOGIT_TARGET_CP,
    };
    let scale = calibrate_scale(&centered, target);
    for t in [&mut net.out_w_c, &mut net.out_w_u] {
        for x in t.data_mut() {
            *x *= scale;
        }
    }
    net.out_b = scale * (net.out_b - center);
    Ok(net)
}

/// Core and signal-at-support for a pilot candidate (no ambient tensor).
fn pilot_candidate(
    cfg: &SimConfig,
    truth: &SimTruth,
    support: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(DenseTensor, Vec<f64>), SimError> {
    match truth {
        SimTruth::Tucker { loadings } => {
            let raw = DenseTensor::from_fn(&cfg.tucker_ranks, |_| rng.sample(StandardNormal));
            let mut core = gaussian_smooth(&raw, cfg.smoothing_bandwidth);
            let nrm = core.frobenius_norm();
            if nrm > 0.0 {
                core.scale_in_place(cfg.core_norm / nrm);
            }
            let vals = support
                .iter()
                .map(|&j| tucker_entry(cfg, loadings, &core, j))
                .collect();
            Ok((core, vals))
        }
        SimTruth::Cp { factors } => {
            let mut coeffs = ar1_coefficients(cfg.cp_rank, cfg.cp_ar_coeff, rng);
            let nrm = dot(&coeffs, &coeffs).sqrt();
            if nrm > 0.0 {
                for c in &mut coeffs {
                    *c *= cfg.coeff_norm / nrm;
                }
            }
            let vals = support
                .iter()
                .map(|&j| cp_entry(cfg, factors, &coeffs, j))
                .collect();
            let r = coeffs.len();
            Ok((DenseTensor::from_vec(&[r], coeffs), vals))
        }
    }
}

fn pilot_refinement(cfg: &SimConfig, support_signal: &[f64], rng: &mut ChaCha8Rng) -> DenseTensor {
    let (lo, hi) = cfg.refinement_scale;
    let vals: Vec<f64> = support_signal
        .iter()
        .map(|s| {
            let sign = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let scale = rng.gen_range(lo..hi);
            sign * scale * s.abs()
        })
        .collect();
    DenseTensor::from_vec(&cfg.refinement_shape, vals)
}

fn decode_multi(dims: &[usize], mut lin: usize) -> Vec<usize> {
    let mut idx = vec![0usize; dims.len()];
    for m in (0..dims.len()).rev() {
        idx[m] = lin % dims[m];
        lin /= dims[m];
    }
    idx
}

fn tucker_entry(cfg: &SimConfig, loadings: &[Matrix], core: &DenseTensor, lin: usize) -> f64 {
    let idx = decode_multi(&cfg.dims, lin);
    let mut total = 0.0;
    let mut cidx = vec![0usize; cfg.tucker_ranks.len()];
    for flat in 0..core.len() {
        let mut rem = flat;
        for m in (0..cfg.tucker_ranks.len()).rev() {
            cidx[m] = rem % cfg.tucker_ranks[m];
            rem /= cfg.tucker_ranks[m];
        }
        let mut w = core.data()[flat];
        for (m, &i) in idx.iter().enumerate() {
            w *= loadings[m].get(i, cidx[m]);
        }
        total += w;
    }
    total
}

fn cp_entry(cfg: &SimConfig, factors: &[Matrix], coeffs: &[f64], lin: usize) -> f64 {
    let idx = decode_multi(&cfg.dims, lin);
    let mut total = 0.0;
    for (r, &c) in coeffs.iter().enumerate() {
        let mut w = c;
        for (m, &i) in idx.iter().enumerate() {
            w *= factors[m].get(i, r);
        }
        total += w;
    }
    total
}

/// Bisection on the pilot class-1 mean logit
/// `sum (s z) sigma(s z) / sum sigma(s z)`, monotone and unbounded in
/// the scale `s` whenever any pilot logit is positive.
fn calibrate_scale(logits: &[f64], target: f64) -> f64 {
    let class1_mean_logit = |s: f64| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &z in logits {
            let zs = s * z;
            let p = 1.0 / (1.0 + (-zs).exp());
            num += zs * p;
            den += p;
        }
        num / den
    };
    let mut lo = 1e-4;
    let mut hi = 1e4;
    if class1_mean_logit(hi) < target {
        log::warn!("labeler calibration target unreachable; using max scale");
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if class1_mean_logit(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn draw_structure(cfg: &SimConfig) -> Result<SimTruth, SimError> {
    let mut rng = cfg.stream(STREAM_STRUCTURE);
    Ok(match cfg.regime {
        Structure::Tucker => SimTruth::Tucker {
            loadings: draw_tucker_loadings(cfg, &mut rng),
        },
        Structure::Cp => SimTruth::Cp {
            factors: draw_cp_factors(cfg, &mut rng),
        },
    })
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Generate a class-balanced dataset with stratified splits; a pure
/// function of the configuration.
pub fn gen_dataset(cfg: &SimConfig) -> Result<SimDataset, SimError> {
    cfg.validate()?;
    let truth = draw_structure(cfg)?;
    let mut refinement_rng = cfg.stream(STREAM_REFINEMENT);
    let support = draw_support(cfg, &mut refinement_rng);
    let labeler = gen_labeler(cfg, &mut cfg.stream(STREAM_LABELER))?;

    let target0 = cfg.n / 2;
    let target1 = cfg.n - target0;
    let mut cores_rng = cfg.stream(STREAM_CORES);
    let mut accept_rng = cfg.stream(STREAM_ACCEPTANCE);

    let mut samples = Vec::with_capacity(cfg.n);
    let mut n0 = 0usize;
    let mut n1 = 0usize;
    let mut candidates = 0usize;

    while n0 < target0 || n1 < target1 {
        if candidates >= CANDIDATE_BUDGET {
            return Err(SimError::AcceptanceBudget {
                candidates,
                n0,
                target0,
                n1,
                target1,
            });
        }
        candidates += 1;

        let (signal, core) = match &truth {
            SimTruth::Tucker { loadings } => gen_tucker_signal(cfg, loadings, &mut cores_rng)?,
            SimTruth::Cp { factors } => {
                let (signal, coeffs) = gen_cp_signal(cfg, factors, &mut cores_rng)?;
                let r = coeffs.len();
                (signal, DenseTensor::from_vec(&[r], coeffs))
            }
        };
        let (u_s, u_n, u_d) = gen_refinement(cfg, &mut refinement_rng, &signal, &support);
        let mut x = signal;
        x.axpy_in_place(1.0, &u_s)?;
        x.axpy_in_place(1.0, &u_n)?;

        let z = labeler.forward_parts(&core, &u_d)?.logit;
        let pi = 1.0 / (1.0 + (-z).exp());
        let y: u8 = if accept_rng.gen::<f64>() < pi { 1 } else { 0 };

        let bucket_full = if y == 1 { n1 >= target1 } else { n0 >= target0 };
        if bucket_full {
            continue;
        }
        if y == 1 {
            n1 += 1;
        } else {
            n0 += 1;
        }
        samples.push(SimSample {
            x,
            y,
            true_pi: pi,
            true_z: z,
            true_core: core,
            u_dense: u_d,
        });
    }

    let splits = stratified_split(&samples, cfg.split_fractions, &mut cfg.stream(STREAM_SPLITS));
    Ok(SimDataset {
        config: cfg.clone(),
        samples,
        splits,
        truth,
        support,
        labeler,
        candidates_drawn: candidates,
    })
}

fn stratified_split(
    samples: &[SimSample],
    fractions: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> SplitIndices {
    let mut out = SplitIndices::default();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.y == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(rng);
        let n = idx.len();
        let n_tr = (fractions.0 * n as f64).round() as usize;
        let n_ca = (fractions.1 * n as f64).round() as usize;
        let n_tr = n_tr.min(n);
        let n_ca = n_ca.min(n - n_tr);
        out.train.extend_from_slice(&idx[..n_tr]);
        out.cal.extend_from_slice(&idx[n_tr..n_tr + n_ca]);
        out.test.extend_from_slice(&idx[n_tr + n_ca..]);
    }
    out.train.sort_unstable();
    out.cal.sort_unstable();
    out.test.sort_unstable();
    out
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TruthFile {
    regime: Structure,
    matrices: Vec<Matrix>,
    support: Vec<usize>,
    labeler_config: NetConfig,
    candidates_drawn: usize,
}

/// Persist a dataset as a directory: stacked tensors in the binary
/// container, labels and oracle values in CSV, config and truth in JSON.
pub fn save_dataset(ds: &SimDataset, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(IoError::from)?;
    save_stacked(&dir.join("tensors.bin"), ds.samples.iter().map(|s| &s.x))?;
    save_stacked(&dir.join("cores.bin"), ds.samples.iter().map(|s| &s.true_core))?;
    save_stacked(&dir.join("udense.bin"), ds.samples.iter().map(|s| &s.u_dense))?;

    let mut meta = BufWriter::new(File::create(dir.join("meta.csv")).map_err(IoError::from)?);
    writeln!(meta, "index,y,true_pi,true_z,split").map_err(IoError::from)?;
    let split_of = |i: usize| -> &'static str {
        if ds.splits.train.binary_search(&i).is_ok() {
            "train"
        } else if ds.splits.cal.binary_search(&i).is_ok() {
            "cal"
        } else {
            "test"
        }
    };
    // Oracle values are written with shortest round-trip formatting so a
    // reloaded dataset carries bit-identical probabilities.
    for (i, s) in ds.samples.iter().enumerate() {
        writeln!(meta, "{},{},{},{},{}", i, s.y, s.true_pi, s.true_z, split_of(i))
            .map_err(IoError::from)?;
    }
    meta.flush().map_err(IoError::from)?;

    let config_json = serde_json::to_string_pretty(&ds.config).map_err(IoError::from)?;
    std::fs::write(dir.join("config.json"), config_json).map_err(IoError::from)?;

    let truth = TruthFile {
        regime: ds.config.regime,
        matrices: ds.truth.matrices().to_vec(),
        support: ds.support.clone(),
        labeler_config: ds.labeler.config.clone(),
        candidates_drawn: ds.candidates_drawn,
    };
    let truth_json = serde_json::to_string_pretty(&truth).map_err(IoError::from)?;
    std::fs::write(dir.join("truth.json"), truth_json).map_err(IoError::from)?;

    let named = ds.labeler.to_named_tensors();
    let refs: Vec<(&str, &DenseTensor)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
    io::save_named_tensors(&dir.join("labeler.bin"), &refs)?;
    Ok(())
}

fn save_stacked<'a>(
    path: &Path,
    tensors: impl Iterator<Item = &'a DenseTensor> + Clone,
) -> Result<(), SimError> {
    let mut iter = tensors.clone();
    let first = iter
        .next()
        .ok_or_else(|| SimError::BadConfig("cannot save an empty dataset".into()))?;
    let count = 1 + iter.count();
    let mut shape = vec![count];
    shape.extend_from_slice(first.shape());
    let mut w = BufWriter::new(File::create(path).map_err(IoError::from)?);
    io::write_header(&mut w, &shape)?;
    for t in tensors {
        io::write_f64s(&mut w, t.data())?;
    }
    w.flush().map_err(IoError::from)?;
    Ok(())
}

fn load_stacked(path: &Path) -> Result<Vec<DenseTensor>, SimError> {
    let mut r = BufReader::new(File::open(path).map_err(IoError::from)?);
    let shape = io::read_header(&mut r)?;
    if shape.is_empty() {
        return Err(SimError::BadDataset(format!(
            "{} is not a stacked container",
            path.display()
        )));
    }
    let count = shape[0];
    let inner = &shape[1..];
    let inner_len: usize = inner.iter().product();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let data = io::read_f64s(&mut r, inner_len)?;
        out.push(DenseTensor::from_vec(inner, data));
    }
    Ok(out)
}

/// Load a dataset saved by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<SimDataset, SimError> {
    let config_text = std::fs::read_to_string(dir.join("config.json"))
        .map_err(|e| SimError::BadDataset(format!("config.json: {e}")))?;
    let config: SimConfig = serde_json::from_str(&config_text).map_err(IoError::from)?;
    let truth_text = std::fs::read_to_string(dir.join("truth.json"))
        .map_err(|e| SimError::BadDataset(format!("truth.json: {e}")))?;
    let truth_file: TruthFile = serde_json::from_str(&truth_text).map_err(IoError::from)?;

    let xs = load_stacked(&dir.join("tensors.bin"))?;
    let cores = load_stacked(&dir.join("cores.bin"))?;
    let udense = load_stacked(&dir.join("udense.bin"))?;
    if xs.len() != cores.len() || xs.len() != udense.len() {
        return Err(SimError::BadDataset("stacked files disagree on n".into()));
    }

    let meta = File::open(dir.join("meta.csv"))
        .map_err(|e| SimError::BadDataset(format!("meta.csv: {e}")))?;
    let mut splits = SplitIndices::default();
    let mut rows: Vec<(u8, f64, f64)> = Vec::with_capacity(xs.len());
    for (lineno, line) in BufReader::new(meta).lines().enumerate() {
        let line = line.map_err(IoError::from)?;
        if lineno == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(SimError::BadDataset(format!(
                "meta.csv line {lineno}: expected 5 fields"
            )));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| SimError::BadDataset(format!("meta.csv line {lineno}: bad index")))?;
        let y: u8 = fields[1]
            .parse()
            .map_err(|_| SimError::BadDataset(format!("meta.csv line {lineno}: bad label")))?;
        let pi: f64 = fields[2]
            .parse()
            .map_err(|_| SimError::BadDataset(format!("meta.csv line {lineno}: bad pi")))?;
        let z: f64 = fields[3]
            .parse()
            .map_err(|_| SimError::BadDataset(format!("meta.csv line {lineno}: bad z")))?;
        match fields[4] {
            "train" => splits.train.push(idx),
            "cal" => splits.cal.push(idx),
            "test" => splits.test.push(idx),
            other => {
                return Err(SimError::BadDataset(format!(
                    "meta.csv line {lineno}: unknown split {other}"
                )))
            }
        }
        rows.push((y, pi, z));
    }
    if rows.len() != xs.len() {
        return Err(SimError::BadDataset("meta.csv row count mismatch".into()));
    }

    let named = io::load_named_tensors(&dir.join("labeler.bin"))?;
    let labeler = DualChannelNet::from_named_tensors(truth_file.labeler_config, &named)?;

    let samples = xs
        .into_iter()
        .zip(cores)
        .zip(udense)
        .zip(rows)
        .map(|(((x, true_core), u_dense), (y, true_pi, true_z))| SimSample {
            x,
            y,
            true_pi,
            true_z,
            true_core,
            u_dense,
        })
        .collect();

    let truth = match truth_file.regime {
        Structure::Tucker => SimTruth::Tucker {
            loadings: truth_file.matrices,
        },
        Structure::Cp => SimTruth::Cp {
            factors: truth_file.matrices,
        },
    };
    Ok(SimDataset {
        config,
        samples,
        splits,
        truth,
        support: truth_file.support,
        labeler,
        candidates_drawn: truth_file.candidates_drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(regime: Structure, seed: u64) -> SimConfig {
        let base = match regime {
            Structure::Tucker => SimConfig::tucker(seed),
            Structure::Cp => SimConfig::cp(seed),
        };
        SimConfig {
            dims: vec![10, 10, 10],
            n: 60,
            cp_rank: 6,
            support_size: 8,
            refinement_shape: vec![2, 4],
            ..base
        }
    }

    #[test]
    fn tucker_core_norm_and_loading_orthonormality() {
        let cfg = SimConfig::tucker(1);
        let mut rng = cfg.stream(STREAM_STRUCTURE);
        let loadings = draw_tucker_loadings(&cfg, &mut rng);
        for u in &loadings {
            let g = u.transpose().matmul(u);
            for i in 0..u.cols {
                for j in 0..u.cols {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g.get(i, j) - expect).abs() < 1e-12);
                }
            }
        }
        let mut core_rng = cfg.stream(STREAM_CORES);
        let (signal, core) = gen_tucker_signal(&cfg, &loadings, &mut core_rng).unwrap();
        assert!((core.frobenius_norm() - 5.0).abs() < 1e-12);
        // Orthonormal loadings preserve the Frobenius norm.
        assert!((signal.frobenius_norm() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn cp_coefficient_norm_and_unit_factor_columns() {
        let cfg = SimConfig::cp(2);
        let mut rng = cfg.stream(STREAM_STRUCTURE);
        let factors = draw_cp_factors(&cfg, &mut rng);
        for a in &factors {
            for r in 0..a.cols {
                let col = a.col(r);
                assert!((dot(&col, &col).sqrt() - 1.0).abs() < 1e-10);
            }
        }
        let mut core_rng = cfg.stream(STREAM_CORES);
        let (_, coeffs) = gen_cp_signal(&cfg, &factors, &mut core_rng).unwrap();
        assert!((dot(&coeffs, &coeffs).sqrt() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn ar1_lag_one_autocorrelation_near_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let c = ar1_coefficients(12, 0.7, &mut rng);
            for w in c.windows(2) {
                xs.push(w[0]);
                ys.push(w[1]);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(
            (corr - 0.7).abs() < 0.05,
            "lag-1 autocorrelation {corr}, expected 0.7 +- 0.05"
        );
    }

    #[test]
    fn refinement_support_and_magnitudes() {
        let cfg = SimConfig::tucker(4);
        let mut srng = cfg.stream(STREAM_REFINEMENT);
        let support = draw_support(&cfg, &mut srng);
        assert_eq!(support.len(), 18);
        let mut sorted = support.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 18, "support indices must be distinct");

        let loadings = draw_tucker_loadings(&cfg, &mut cfg.stream(STREAM_STRUCTURE));
        let (signal, _) = gen_tucker_signal(&cfg, &loadings, &mut cfg.stream(STREAM_CORES)).unwrap();
        let (u_s, u_n, u_d) = gen_refinement(&cfg, &mut srng, &signal, &support);

        for (pos, &v) in u_s.data().iter().enumerate() {
            if support.binary_search(&pos).is_ok() {
                let s = signal.data()[pos];
                if s != 0.0 {
                    let ratio = v.abs() / s.abs();
                    assert!(
                        (5.0..8.0).contains(&ratio),
                        "support magnitude ratio {ratio} outside [5, 8]"
                    );
                }
            } else {
                assert_eq!(v, 0.0, "entry off the support must be zero");
            }
        }
        assert_eq!(u_d.len(), 18);
        assert_eq!(u_d.shape(), &[2, 3, 3]);

        // Chi-square concentration of the noise energy.
        let ambient = u_n.len() as f64;
        let avg_sq = u_n.data().iter().map(|x| x * x).sum::<f64>() / ambient;
        assert!(
            (avg_sq - 0.01).abs() < 0.001,
            "noise variance {avg_sq}, expected 0.01 +- 10%"
        );
    }

    #[test]
    fn zero_weight_labeler_gives_even_odds() {
        let cfg = small_cfg(Structure::Tucker, 5);
        let mut rng = cfg.stream(STREAM_LABELER);
        let mut net = DualChannelNet::init(labeler_config(&cfg), &mut rng);
        for (_, s) in net.param_slices_mut() {
            for x in s {
                *x = 0.0;
            }
        }
        let core = DenseTensor::from_fn(&cfg.tucker_ranks, |_| 0.3);
        let u = DenseTensor::from_fn(&cfg.refinement_shape, |_| -0.2);
        let z = net.forward_parts(&core, &u).unwrap().logit;
        assert_eq!(z, 0.0);
        assert_eq!(1.0 / (1.0 + (-z).exp()), 0.5);
    }

    #[test]
    fn dataset_is_balanced_stratified_and_deterministic() {
        let cfg = small_cfg(Structure::Tucker, 6);
        let ds = gen_dataset(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 60);
        let n1: usize = ds.samples.iter().filter(|s| s.y == 1).count();
        assert_eq!(n1, 30);
        assert_eq!(ds.splits.train.len(), 36);
        assert_eq!(ds.splits.cal.len(), 12);
        assert_eq!(ds.splits.test.len(), 12);
        // Stratification: each split holds half of each class.
        for (name, idx) in [
            ("train", &ds.splits.train),
            ("cal", &ds.splits.cal),
            ("test", &ds.splits.test),
        ] {
            let ones = idx.iter().filter(|&&i| ds.samples[i].y == 1).count();
            assert_eq!(ones * 2, idx.len(), "split {name} not stratified");
        }
        for s in &ds.samples {
            let pi = 1.0 / (1.0 + (-s.true_z).exp());
            assert!((pi - s.true_pi).abs() < 1e-12);
        }

        let ds2 = gen_dataset(&cfg).unwrap();
        assert_eq!(ds.candidates_drawn, ds2.candidates_drawn);
        for (a, b) in ds.samples.iter().zip(&ds2.samples) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(a.true_pi, b.true_pi);
        }
        assert_eq!(ds.splits.train, ds2.splits.train);
    }

    #[test]
    fn dataset_round_trips_through_directory() {
        let cfg = small_cfg(Structure::Cp, 7);
        let ds = gen_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.true_core, b.true_core);
            assert_eq!(a.u_dense, b.u_dense);
            assert_eq!(a.y, b.y);
            assert_eq!(a.true_pi, b.true_pi);
            assert_eq!(a.true_z, b.true_z);
        }
        assert_eq!(back.splits.train, ds.splits.train);
        assert_eq!(back.splits.cal, ds.splits.cal);
        assert_eq!(back.splits.test, ds.splits.test);
        assert_eq!(back.support, ds.support);
        // Labeler round trip preserves logits.
        let s = &ds.samples[0];
        let za = ds.labeler.forward_parts(&s.true_core, &s.u_dense).unwrap().logit;
        let zb = back
            .labeler
            .forward_parts(&s.true_core, &s.u_dense)
            .unwrap()
            .logit;
        assert_eq!(za, zb);
    }

    #[test]
    fn smoothing_preserves_constant_fields() {
        let t = DenseTensor::from_fn(&[3, 3, 3], |_| 2.5);
        let s = gaussian_smooth(&t, 1.0);
        for &v in s.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_refinement_shape_is_rejected() {
        let mut cfg = SimConfig::tucker(8);
        cfg.refinement_shape = vec![2, 2, 2];
        assert!(matches!(
            gen_dataset(&cfg),
            Err(SimError::BadConfig(_))
        ));
    }
}
