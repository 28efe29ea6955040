//! Coupled two-channel deep ReLU tensor network with a sparse selector.
//!
//! The network carries a core hidden state and a refinement hidden state
//! through `depth` paired layers; each channel's pre-activation receives
//! contributions from both channels through four weight tensors, with
//! optional per-channel layer normalization, ReLU activations, a linear
//! output layer, elementwise truncation at level `V`, and a final link
//! (identity or sigmoid). The refinement input is produced by a learned
//! selector tensor contracted against the centered covariate and is
//! sparsified by a clipped-L1 penalty.
//!
//! Gradients are exact reverse-mode derivatives of the data loss; the
//! clipped-L1 term enters as a subgradient (zero at and beyond the
//! clipping threshold). Training is plain Adam over shuffled mini-batches
//! and is bit-deterministic given the seed: per-sample gradients are
//! computed in parallel but folded in sample order.

use crate::decomp::{DecompError, DecompModel};
use crate::par;
use crate::tensor::{dot, DenseTensor, TensorError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
const BCE_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("shape chain violation: {0}")]
    ShapeChain(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {0}")]
    LengthMismatch(String),
    #[error("net has no selector but a raw covariate path was requested")]
    SelectorMissing,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("corrupt checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

/// Output link applied after truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Sigmoid,
}

/// Data-fit term of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Bce,
}

/// Learning-rate schedule over the training run. The base rate is the
/// configured one; cosine anneals it to zero across the epoch budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Optimizer and penalty settings. Defaults follow the simulation
/// protocol: clipped-L1 with lambda = 0.1, tau = 0.05, Adam at learning
/// rate 1e-3 with weight decay 1e-4, batch size 128.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.05,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 60,
            seed: 0,
            loss: LossKind::Bce,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

/// Architecture description used to initialize a network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetConfig {
    pub core_in: Vec<usize>,
    pub ref_in: Vec<usize>,
    /// Hidden core-channel shape, constant across layers (defaults to
    /// `core_in`).
    pub core_hidden: Vec<usize>,
    /// Hidden refinement-channel shape (defaults to `ref_in`).
    pub ref_hidden: Vec<usize>,
    pub depth: usize,
    pub link: Link,
    pub layer_norm: bool,
    /// Truncation level V; infinity disables it (stored as JSON null).
    #[serde(with = "serde_infinity")]
    pub truncation: f64,
    /// Optional max-abs weight bound, enforced by projection after init
    /// and after every optimizer step when set.
    pub weight_bound: Option<f64>,
    /// Ambient covariate shape; present iff the net owns a selector.
    pub selector_dims: Option<Vec<usize>>,
    /// Half-width of the uniform bias initialization (0 = zero biases).
    pub bias_init: f64,
}

/// JSON has no infinity literal; represent a disabled truncation level
/// as null.
mod serde_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl NetConfig {
    /// Classifier configuration: sigmoid link, layer norm on, hidden
    /// shapes matching the inputs, selector over the given ambient shape.
    pub fn classifier(
        core_in: Vec<usize>,
        ref_in: Vec<usize>,
        input_dims: Vec<usize>,
        depth: usize,
    ) -> Self {
        Self {
            core_hidden: core_in.clone(),
            ref_hidden: ref_in.clone(),
            core_in,
            ref_in,
            depth,
            link: Link::Sigmoid,
            layer_norm: true,
            truncation: f64::INFINITY,
            weight_bound: None,
            selector_dims: Some(input_dims),
            bias_init: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Per-channel learned layer-norm scale and shift.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma_c: Vec<f64>,
    pub beta_c: Vec<f64>,
    pub gamma_u: Vec<f64>,
    pub beta_u: Vec<f64>,
}

/// One paired layer: four cross/within weight tensors plus biases.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w_cc: DenseTensor,
    pub w_cu: DenseTensor,
    pub w_uc: DenseTensor,
    pub w_uu: DenseTensor,
    pub b_c: DenseTensor,
    pub b_u: DenseTensor,
    pub ln: Option<LayerNormParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualChannelNet {
    pub config: NetConfig,
    pub layers: Vec<LayerWeights>,
    pub out_w_c: DenseTensor,
    pub out_w_u: DenseTensor,
    pub out_b: f64,
    /// Selector tensor of shape `ref_in ++ selector_dims`.
    pub selector: Option<DenseTensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Selector,
}

impl DualChannelNet {
    /// Initialize with uniform weights in `[-s, s]`, `s = fan_in^{-1/2}`
    /// per contraction block; biases uniform in `[-bias_init, bias_init]`;
    /// layer-norm scale 1 and shift 0.
    pub fn init(config: NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let core_n: usize = config.core_in.iter().product();
        let ref_n: usize = config.ref_in.iter().product();
        let core_h: usize = config.core_hidden.iter().product();
        let ref_h: usize = config.ref_hidden.iter().product();

        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let (in_c, in_u, in_c_shape, in_u_shape) = if l == 0 {
                (core_n, ref_n, &config.core_in, &config.ref_in)
            } else {
                (core_h, ref_h, &config.core_hidden, &config.ref_hidden)
            };
            let w_cc = uniform_tensor(rng, &cat(&config.core_hidden, in_c_shape), in_c);
            let w_cu = uniform_tensor(rng, &cat(&config.core_hidden, in_u_shape), in_u);
            let w_uc = uniform_tensor(rng, &cat(&config.ref_hidden, in_c_shape), in_c);
            let w_uu = uniform_tensor(rng, &cat(&config.ref_hidden, in_u_shape), in_u);
            let b_c = bias_tensor(rng, &config.core_hidden, config.bias_init);
            let b_u = bias_tensor(rng, &config.ref_hidden, config.bias_init);
            let ln = config.layer_norm.then(|| LayerNormParams {
                gamma_c: vec![1.0; core_h],
                beta_c: vec![0.0; core_h],
                gamma_u: vec![1.0; ref_h],
                beta_u: vec![0.0; ref_h],
            });
            layers.push(LayerWeights {
                w_cc,
                w_cu,
                w_uc,
                w_uu,
                b_c,
                b_u,
                ln,
            });
        }

        let (out_c_shape, out_c_n, out_u_shape, out_u_n) = if config.depth == 0 {
            (&config.core_in, core_n, &config.ref_in, ref_n)
        } else {
            (&config.core_hidden, core_h, &config.ref_hidden, ref_h)
        };
        let out_w_c = uniform_tensor(rng, out_c_shape, out_c_n + out_u_n);
        let out_w_u = uniform_tensor(rng, out_u_shape, out_c_n + out_u_n);

        let selector = config.selector_dims.as_ref().map(|dims| {
            let fan_in: usize = dims.iter().product();
            uniform_tensor(rng, &cat(&config.ref_in, dims), fan_in)
        });

        let mut net = Self {
            config,
            layers,
            out_w_c,
            out_w_u,
            out_b: 0.0,
            selector,
        };
        if let Some(b) = net.config.weight_bound {
            net.clamp_weights(b);
        }
        net
    }

    /// Project every parameter into `[-b, b]`.
    pub fn clamp_weights(&mut self, b: f64) {
        for (_, slice) in self.param_slices_mut() {
            for x in slice {
                *x = x.clamp(-b, b);
            }
        }
    }

    /// All parameter leaves in a fixed order (layers first, then output
    /// weights, bias, selector). The gradient structure uses the same
    /// order, which is what ties the optimizer state to the right leaf.
    pub fn param_slices_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out: Vec<(ParamKind, &mut [f64])> = Vec::new();
        for layer in &mut self.layers {
            out.push((ParamKind::Weight, layer.w_cc.data_mut()));
            out.push((ParamKind::Weight, layer.w_cu.data_mut()));
            out.push((ParamKind::Weight, layer.w_uc.data_mut()));
            out.push((ParamKind::Weight, layer.w_uu.data_mut()));
            out.push((ParamKind::Bias, layer.b_c.data_mut()));
            out.push((ParamKind::Bias, layer.b_u.data_mut()));
            if let Some(ln) = &mut layer.ln {
                out.push((ParamKind::Norm, ln.gamma_c.as_mut_slice()));
                out.push((ParamKind::Norm, ln.beta_c.as_mut_slice()));
                out.push((ParamKind::Norm, ln.gamma_u.as_mut_slice()));
                out.push((ParamKind::Norm, ln.beta_u.as_mut_slice()));
            }
        }
        out.push((ParamKind::Weight, self.out_w_c.data_mut()));
        out.push((ParamKind::Weight, self.out_w_u.data_mut()));
        out.push((ParamKind::Bias, std::slice::from_mut(&mut self.out_b)));
        if let Some(sel) = &mut self.selector {
            out.push((ParamKind::Selector, sel.data_mut()));
        }
        out
    }

    fn ref_in_len(&self) -> usize {
        self.config.ref_in.iter().product()
    }
}

fn cat(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> DenseTensor {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    DenseTensor::from_fn(shape, |_| rng.gen_range(-s..s))
}

fn bias_tensor(rng: &mut ChaCha8Rng, shape: &[usize], half_width: f64) -> DenseTensor {
    if half_width == 0.0 {
        DenseTensor::zeros(shape)
    } else {
        DenseTensor::from_fn(shape, |_| rng.gen_range(-half_width..half_width))
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LnTrace {
    normed: Vec<f64>,
    inv_std: f64,
}

struct LayerTrace {
    /// Values fed into ReLU (post layer-norm when enabled).
    relu_in_c: Vec<f64>,
    relu_in_u: Vec<f64>,
    act_c: Vec<f64>,
    act_u: Vec<f64>,
    ln_c: Option<LnTrace>,
    ln_u: Option<LnTrace>,
}

/// Per-sample forward record: the refinement input, all hidden
/// activations, and the output chain values needed for backprop.
pub struct ForwardTrace {
    pub core_input: Vec<f64>,
    pub u_input: Vec<f64>,
    layers: Vec<LayerTrace>,
    pub logit_pre_trunc: f64,
    pub logit: f64,
    pub output: f64,
}

impl ForwardTrace {
    /// Refinement input as a tensor in the configured shape.
    pub fn refinement(&self, net: &DualChannelNet) -> DenseTensor {
        DenseTensor::from_vec(&net.config.ref_in, self.u_input.clone())
    }
}

/// `out[p] = sum_j w[p, j] h[j]` over the flattened trailing block.
fn contract_flat(w: &DenseTensor, h: &[f64], out: &mut [f64]) {
    let in_len = h.len();
    debug_assert_eq!(w.len(), in_len * out.len());
    for (p, slot) in out.iter_mut().enumerate() {
        *slot = dot(&w.data()[p * in_len..(p + 1) * in_len], h);
    }
}

/// `acc[p] += sum_j w[p, j] h[j]`.
fn contract_flat_add(w: &DenseTensor, h: &[f64], acc: &mut [f64]) {
    let in_len = h.len();
    for (p, slot) in acc.iter_mut().enumerate() {
        *slot += dot(&w.data()[p * in_len..(p + 1) * in_len], h);
    }
}

/// `d_in[j] += sum_p w[p, j] d_out[p]` (transposed contraction).
fn contract_flat_transposed_add(w: &DenseTensor, d_out: &[f64], d_in: &mut [f64]) {
    let in_len = d_in.len();
    for (p, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w.data()[p * in_len..(p + 1) * in_len];
        for (d, &wv) in d_in.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

/// Ambient-dimension tile for the batched selector kernels: a selector
/// row tile stays cache-resident while a batch streams through once.
const SELECTOR_TILE: usize = 2048;

/// Selector outputs for a whole batch, tiled over the ambient dimension.
/// Accumulation order is fixed (tiles ascending, lanes inside `dot`), so
/// the result is deterministic and identical across thread counts.
fn selector_batch_outputs(sel: &DenseTensor, centered: &[Vec<f64>], ref_len: usize) -> Vec<Vec<f64>> {
    let ambient = centered[0].len();
    let mut outputs = vec![vec![0.0; ref_len]; centered.len()];
    let mut start = 0;
    while start < ambient {
        let end = (start + SELECTOR_TILE).min(ambient);
        for (xc, u) in centered.iter().zip(outputs.iter_mut()) {
            let xt = &xc[start..end];
            for (k, slot) in u.iter_mut().enumerate() {
                *slot += dot(&sel.data()[k * ambient + start..k * ambient + end], xt);
            }
        }
        start = end;
    }
    outputs
}

/// Accumulate the selector gradient `grad[k, :] += sum_i d_u[i][k] *
/// centered[i]`, tiled over the ambient dimension with samples in order.
fn selector_grad_accumulate(
    grad: &mut [f64],
    d_us: &[&[f64]],
    centered: &[Vec<f64>],
    ref_len: usize,
) {
    let ambient = centered[0].len();
    let mut start = 0;
    while start < ambient {
        let end = (start + SELECTOR_TILE).min(ambient);
        for (du, xc) in d_us.iter().zip(centered) {
            let xt = &xc[start..end];
            for k in 0..ref_len {
                let g = du[k];
                if g == 0.0 {
                    continue;
                }
                let row = &mut grad[k * ambient + start..k * ambient + end];
                for (slot, &x) in row.iter_mut().zip(xt) {
                    *slot += g * x;
                }
            }
        }
        start = end;
    }
}

fn layer_norm_forward(pre: &[f64], gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LnTrace) {
    let n = pre.len() as f64;
    let mean = pre.iter().sum::<f64>() / n;
    let var = pre.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let normed: Vec<f64> = pre.iter().map(|x| (x - mean) * inv_std).collect();
    let out: Vec<f64> = normed
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(xh, (g, b))| g * xh + b)
        .collect();
    (out, LnTrace { normed, inv_std })
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DualChannelNet {
    /// Selector output `U = W_u . (x - mean)` in the refinement shape.
    pub fn selector_output(
        &self,
        x: &DenseTensor,
        mean: &DenseTensor,
    ) -> Result<DenseTensor, NetworkError> {
        let centered = centered_data(x, mean)?;
        Ok(DenseTensor::from_vec(
            &self.config.ref_in,
            self.selector_output_from_centered(&centered)?,
        ))
    }

    fn selector_output_from_centered(&self, centered: &[f64]) -> Result<Vec<f64>, NetworkError> {
        let sel = self.selector.as_ref().ok_or(NetworkError::SelectorMissing)?;
        if sel.len() != self.ref_in_len() * centered.len() {
            return Err(NetworkError::ShapeChain(format!(
                "selector expects ambient length {}, covariate has {}",
                sel.len() / self.ref_in_len(),
                centered.len()
            )));
        }
        let mut u = vec![0.0; self.ref_in_len()];
        contract_flat(sel, centered, &mut u);
        Ok(u)
    }

    /// Forward pass from an explicit core and refinement input.
    pub fn forward_parts(
        &self,
        core: &DenseTensor,
        u: &DenseTensor,
    ) -> Result<ForwardTrace, NetworkError> {
        if core.shape() != self.config.core_in.as_slice() {
            return Err(NetworkError::ShapeChain(format!(
                "core input shape {:?}, expected {:?}",
                core.shape(),
                self.config.core_in
            )));
        }
        if u.shape() != self.config.ref_in.as_slice() {
            return Err(NetworkError::ShapeChain(format!(
                "refinement input shape {:?}, expected {:?}",
                u.shape(),
                self.config.ref_in
            )));
        }
        Ok(self.forward_flat(core.data().to_vec(), u.data().to_vec()))
    }

    /// Forward pass computing the refinement input through the selector.
    pub fn forward(
        &self,
        core: &DenseTensor,
        x: &DenseTensor,
        mean: &DenseTensor,
    ) -> Result<ForwardTrace, NetworkError> {
        let centered = centered_data(x, mean)?;
        let u = self.selector_output_from_centered(&centered)?;
        if core.shape() != self.config.core_in.as_slice() {
            return Err(NetworkError::ShapeChain(format!(
                "core input shape {:?}, expected {:?}",
                core.shape(),
                self.config.core_in
            )));
        }
        Ok(self.forward_flat(core.data().to_vec(), u))
    }

    fn forward_flat(&self, core: Vec<f64>, u: Vec<f64>) -> ForwardTrace {
        let mut h_c = core.clone();
        let mut h_u = u.clone();
        let mut layers = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let core_h = layer.b_c.len();
            let ref_h = layer.b_u.len();
            let mut pre_c = layer.b_c.data().to_vec();
            contract_flat_add(&layer.w_cc, &h_c, &mut pre_c);
            contract_flat_add(&layer.w_cu, &h_u, &mut pre_c);
            let mut pre_u = layer.b_u.data().to_vec();
            contract_flat_add(&layer.w_uc, &h_c, &mut pre_u);
            contract_flat_add(&layer.w_uu, &h_u, &mut pre_u);
            debug_assert_eq!(pre_c.len(), core_h);
            debug_assert_eq!(pre_u.len(), ref_h);

            let (relu_in_c, ln_c) = match &layer.ln {
                Some(ln) => {
                    let (o, t) = layer_norm_forward(&pre_c, &ln.gamma_c, &ln.beta_c);
                    (o, Some(t))
                }
                None => (pre_c, None),
            };
            let (relu_in_u, ln_u) = match &layer.ln {
                Some(ln) => {
                    let (o, t) = layer_norm_forward(&pre_u, &ln.gamma_u, &ln.beta_u);
                    (o, Some(t))
                }
                None => (pre_u, None),
            };
            let act_c = relu(&relu_in_c);
            let act_u = relu(&relu_in_u);
            h_c = act_c.clone();
            h_u = act_u.clone();
            layers.push(LayerTrace {
                relu_in_c,
                relu_in_u,
                act_c,
                act_u,
                ln_c,
                ln_u,
            });
        }

        let logit_pre_trunc =
            dot(self.out_w_c.data(), &h_c) + dot(self.out_w_u.data(), &h_u) + self.out_b;
        let v = self.config.truncation;
        let logit = if logit_pre_trunc.abs() <= v {
            logit_pre_trunc
        } else {
            logit_pre_trunc.signum() * v
        };
        let output = match self.config.link {
            Link::Identity => logit,
            Link::Sigmoid => sigmoid(logit),
        };
        ForwardTrace {
            core_input: core,
            u_input: u,
            layers,
            logit_pre_trunc,
            logit,
            output,
        }
    }
}

fn centered_data(x: &DenseTensor, mean: &DenseTensor) -> Result<Vec<f64>, NetworkError> {
    if x.shape() != mean.shape() {
        return Err(NetworkError::ShapeChain(format!(
            "covariate shape {:?} does not match mean shape {:?}",
            x.shape(),
            mean.shape()
        )));
    }
    Ok(x.data()
        .iter()
        .zip(mean.data())
        .map(|(a, b)| a - b)
        .collect())
}

// ---------------------------------------------------------------------------
// Loss and penalty
// ---------------------------------------------------------------------------

/// Clipped-L1 penalty: `sum lambda * min(|w| / tau, 1)` over all entries.
pub fn clipped_l1(w: &DenseTensor, lambda: f64, tau: f64) -> f64 {
    assert!(tau > 0.0, "clipping threshold must be positive");
    w.data()
        .iter()
        .map(|&x| lambda * (x.abs() / tau).min(1.0))
        .sum()
}

/// Subgradient of the clipped-L1 penalty: `sign(w) * lambda / tau` strictly
/// inside the clip region, zero at zero and at or beyond the threshold.
fn clipped_l1_subgrad(w: f64, lambda: f64, tau: f64) -> f64 {
    if w == 0.0 || w.abs() >= tau {
        0.0
    } else {
        w.signum() * lambda / tau
    }
}

fn sample_loss(output: f64, y: f64, loss: LossKind) -> f64 {
    match loss {
        LossKind::Squared => {
            let r = y - output;
            r * r
        }
        LossKind::Bce => {
            let p = output.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// d(sample loss)/d(logit), combining the loss derivative with the link.
fn sample_dloss_dlogit(output: f64, y: f64, loss: LossKind, link: Link) -> f64 {
    match (loss, link) {
        (LossKind::Bce, Link::Sigmoid) => output - y,
        (LossKind::Squared, Link::Identity) => 2.0 * (output - y),
        (LossKind::Squared, Link::Sigmoid) => 2.0 * (output - y) * output * (1.0 - output),
        (LossKind::Bce, Link::Identity) => {
            // BCE on a raw output only makes sense inside (0,1); clamp as
            // in the loss value.
            let p = output.clamp(BCE_EPS, 1.0 - BCE_EPS);
            (p - y) / (p * (1.0 - p))
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub w_cc: Vec<f64>,
    pub w_cu: Vec<f64>,
    pub w_uc: Vec<f64>,
    pub w_uu: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_u: Vec<f64>,
    pub ln: Option<LnGrads>,
}

#[derive(Clone, Debug)]
pub struct LnGrads {
    pub gamma_c: Vec<f64>,
    pub beta_c: Vec<f64>,
    pub gamma_u: Vec<f64>,
    pub beta_u: Vec<f64>,
}

/// Gradient structure mirroring the parameter leaves.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
    pub out_w_c: Vec<f64>,
    pub out_w_u: Vec<f64>,
    pub out_b: [f64; 1],
    pub selector: Option<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &DualChannelNet, with_selector: bool) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrads {
                w_cc: vec![0.0; l.w_cc.len()],
                w_cu: vec![0.0; l.w_cu.len()],
                w_uc: vec![0.0; l.w_uc.len()],
                w_uu: vec![0.0; l.w_uu.len()],
                b_c: vec![0.0; l.b_c.len()],
                b_u: vec![0.0; l.b_u.len()],
                ln: l.ln.as_ref().map(|ln| LnGrads {
                    gamma_c: vec![0.0; ln.gamma_c.len()],
                    beta_c: vec![0.0; ln.beta_c.len()],
                    gamma_u: vec![0.0; ln.gamma_u.len()],
                    beta_u: vec![0.0; ln.beta_u.len()],
                }),
            })
            .collect();
        Self {
            layers,
            out_w_c: vec![0.0; net.out_w_c.len()],
            out_w_u: vec![0.0; net.out_w_u.len()],
            out_b: [0.0],
            selector: (with_selector && net.selector.is_some())
                .then(|| vec![0.0; net.selector.as_ref().unwrap().len()]),
        }
    }

    /// Leaves in the same fixed order as
    /// [`DualChannelNet::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w_cc);
            out.push(&l.w_cu);
            out.push(&l.w_uc);
            out.push(&l.w_uu);
            out.push(&l.b_c);
            out.push(&l.b_u);
            if let Some(ln) = &l.ln {
                out.push(&ln.gamma_c);
                out.push(&ln.beta_c);
                out.push(&ln.gamma_u);
                out.push(&ln.beta_u);
            }
        }
        out.push(&self.out_w_c);
        out.push(&self.out_w_u);
        out.push(&self.out_b);
        if let Some(sel) = &self.selector {
            out.push(sel);
        }
        out
    }

    fn add_in_place(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            add_vec(&mut a.w_cc, &b.w_cc);
            add_vec(&mut a.w_cu, &b.w_cu);
            add_vec(&mut a.w_uc, &b.w_uc);
            add_vec(&mut a.w_uu, &b.w_uu);
            add_vec(&mut a.b_c, &b.b_c);
            add_vec(&mut a.b_u, &b.b_u);
            if let (Some(la), Some(lb)) = (&mut a.ln, &b.ln) {
                add_vec(&mut la.gamma_c, &lb.gamma_c);
                add_vec(&mut la.beta_c, &lb.beta_c);
                add_vec(&mut la.gamma_u, &lb.gamma_u);
                add_vec(&mut la.beta_u, &lb.beta_u);
            }
        }
        add_vec(&mut self.out_w_c, &other.out_w_c);
        add_vec(&mut self.out_w_u, &other.out_w_u);
        self.out_b[0] += other.out_b[0];
    }
}

fn add_vec(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct SampleBackward {
    grads: NetGrads,
    /// dL/dU, the gradient at the refinement input (feeds the selector).
    d_u: Vec<f64>,
    loss: f64,
    residual: f64,
}

/// Reverse-mode gradients of `scale * loss(sample)` through the whole
/// chain; the caller supplies `scale = 1/batch_size`.
fn backward_sample(
    net: &DualChannelNet,
    trace: &ForwardTrace,
    y: f64,
    loss_kind: LossKind,
    scale: f64,
) -> SampleBackward {
    let mut grads = NetGrads::zeros_like(net, false);
    let loss = sample_loss(trace.output, y, loss_kind);
    let residual = trace.output - y;

    // Truncation passes gradient only strictly inside (-V, V).
    let pass = trace.logit_pre_trunc.abs() < net.config.truncation;
    let delta_out = if pass {
        scale * sample_dloss_dlogit(trace.output, y, loss_kind, net.config.link)
    } else {
        0.0
    };

    let (h_c_last, h_u_last): (&[f64], &[f64]) = match trace.layers.last() {
        Some(t) => (&t.act_c, &t.act_u),
        None => (&trace.core_input, &trace.u_input),
    };
    for (g, &h) in grads.out_w_c.iter_mut().zip(h_c_last) {
        *g = delta_out * h;
    }
    for (g, &h) in grads.out_w_u.iter_mut().zip(h_u_last) {
        *g = delta_out * h;
    }
    grads.out_b[0] = delta_out;

    let mut d_hc: Vec<f64> = net.out_w_c.data().iter().map(|&w| delta_out * w).collect();
    let mut d_hu: Vec<f64> = net.out_w_u.data().iter().map(|&w| delta_out * w).collect();

    for (l, (layer, tr)) in net.layers.iter().zip(&trace.layers).enumerate().rev() {
        // ReLU subgradient (zero at zero).
        let mut d_relu_in_c: Vec<f64> = d_hc
            .iter()
            .zip(&tr.relu_in_c)
            .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
            .collect();
        let mut d_relu_in_u: Vec<f64> = d_hu
            .iter()
            .zip(&tr.relu_in_u)
            .map(|(&d, &x)| if x > 0.0 { d } else { 0.0 })
            .collect();

        // Layer-norm backward when present; otherwise the ReLU input is
        // the raw pre-activation.
        let lg = &mut grads.layers[l];
        let (d_pre_c, d_pre_u) = match (&layer.ln, &tr.ln_c, &tr.ln_u) {
            (Some(ln), Some(tc), Some(tu)) => {
                let lng = lg.ln.as_mut().expect("ln grads allocated");
                let d_pre_c = layer_norm_backward(
                    &d_relu_in_c,
                    tc,
                    &ln.gamma_c,
                    &mut lng.gamma_c,
                    &mut lng.beta_c,
                );
                let d_pre_u = layer_norm_backward(
                    &d_relu_in_u,
                    tu,
                    &ln.gamma_u,
                    &mut lng.gamma_u,
                    &mut lng.beta_u,
                );
                (d_pre_c, d_pre_u)
            }
            _ => (std::mem::take(&mut d_relu_in_c), std::mem::take(&mut d_relu_in_u)),
        };

        let (h_c_prev, h_u_prev): (&[f64], &[f64]) = if l == 0 {
            (&trace.core_input, &trace.u_input)
        } else {
            (&trace.layers[l - 1].act_c, &trace.layers[l - 1].act_u)
        };

        outer_add(&mut lg.w_cc, &d_pre_c, h_c_prev);
        outer_add(&mut lg.w_cu, &d_pre_c, h_u_prev);
        outer_add(&mut lg.w_uc, &d_pre_u, h_c_prev);
        outer_add(&mut lg.w_uu, &d_pre_u, h_u_prev);
        add_vec(&mut lg.b_c, &d_pre_c);
        add_vec(&mut lg.b_u, &d_pre_u);

        let mut d_hc_prev = vec![0.0; h_c_prev.len()];
        let mut d_hu_prev = vec![0.0; h_u_prev.len()];
        contract_flat_transposed_add(&layer.w_cc, &d_pre_c, &mut d_hc_prev);
        contract_flat_transposed_add(&layer.w_uc, &d_pre_u, &mut d_hc_prev);
        contract_flat_transposed_add(&layer.w_cu, &d_pre_c, &mut d_hu_prev);
        contract_flat_transposed_add(&layer.w_uu, &d_pre_u, &mut d_hu_prev);
        d_hc = d_hc_prev;
        d_hu = d_hu_prev;
    }

    SampleBackward {
        grads,
        d_u: d_hu,
        loss,
        residual,
    }
}

fn layer_norm_backward(
    d_out: &[f64],
    tr: &LnTrace,
    gamma: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let n = d_out.len() as f64;
    let mut d_normed = vec![0.0; d_out.len()];
    for (j, &g) in d_out.iter().enumerate() {
        d_gamma[j] += g * tr.normed[j];
        d_beta[j] += g;
        d_normed[j] = g * gamma[j];
    }
    let mean_dn = d_normed.iter().sum::<f64>() / n;
    let mean_dn_xhat = d_normed
        .iter()
        .zip(&tr.normed)
        .map(|(d, x)| d * x)
        .sum::<f64>()
        / n;
    d_normed
        .iter()
        .zip(&tr.normed)
        .map(|(&d, &x)| tr.inv_std * (d - mean_dn - x * mean_dn_xhat))
        .collect()
}

fn outer_add(grad: &mut [f64], d_out: &[f64], h_in: &[f64]) {
    let in_len = h_in.len();
    for (p, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut grad[p * in_len..(p + 1) * in_len];
        for (slot, &h) in row.iter_mut().zip(h_in) {
            *slot += g * h;
        }
    }
}

/// One training batch (parallel slices into the owning dataset).
pub struct Batch<'a> {
    pub cores: &'a [DenseTensor],
    pub xs: &'a [&'a DenseTensor],
    pub ys: &'a [f64],
}

/// Mean data loss over the batch plus the selector penalty, with
/// per-sample residuals `output - y`.
pub fn loss(
    net: &DualChannelNet,
    batch: &Batch<'_>,
    mean: &DenseTensor,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>), NetworkError> {
    if batch.cores.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    check_batch(batch)?;
    let us = batch_refinement_inputs(net, batch, mean)?;
    let evals: Vec<Result<(f64, f64), NetworkError>> =
        par::batch_map_indices(batch.cores.len(), |i| {
            let core = &batch.cores[i];
            if core.shape() != net.config.core_in.as_slice() {
                return Err(NetworkError::ShapeChain(format!(
                    "core input shape {:?}, expected {:?}",
                    core.shape(),
                    net.config.core_in
                )));
            }
            let trace = net.forward_flat(core.data().to_vec(), us[i].clone());
            Ok((
                sample_loss(trace.output, batch.ys[i], cfg.loss),
                trace.output - batch.ys[i],
            ))
        });
    let mut total = 0.0;
    let mut residuals = Vec::with_capacity(evals.len());
    for e in evals {
        let (l, r) = e?;
        total += l;
        residuals.push(r);
    }
    let mut value = total / batch.cores.len() as f64;
    if let Some(sel) = &net.selector {
        value += clipped_l1(sel, cfg.lambda, cfg.tau);
    }
    Ok((value, residuals))
}

fn batch_centered(batch: &Batch<'_>, mean: &DenseTensor) -> Result<Vec<Vec<f64>>, NetworkError> {
    let out: Vec<Result<Vec<f64>, NetworkError>> =
        par::batch_map(batch.xs, |x| centered_data(x, mean));
    out.into_iter().collect()
}

fn batch_refinement_inputs(
    net: &DualChannelNet,
    batch: &Batch<'_>,
    mean: &DenseTensor,
) -> Result<Vec<Vec<f64>>, NetworkError> {
    let sel = net.selector.as_ref().ok_or(NetworkError::SelectorMissing)?;
    let centered = batch_centered(batch, mean)?;
    let ref_len: usize = net.config.ref_in.iter().product();
    if sel.len() != ref_len * centered[0].len() {
        return Err(NetworkError::ShapeChain(format!(
            "selector expects ambient length {}, covariate has {}",
            sel.len() / ref_len,
            centered[0].len()
        )));
    }
    Ok(selector_batch_outputs(sel, &centered, ref_len))
}

/// Full-batch gradients of the training objective: exact data-loss
/// gradients plus the clipped-L1 subgradient on the selector.
///
/// Per-sample work runs in parallel; accumulation folds in sample order,
/// and each selector row accumulates its own samples-in-order sum, so the
/// result is bit-identical to a sequential pass.
pub fn batch_gradients(
    net: &DualChannelNet,
    batch: &Batch<'_>,
    mean: &DenseTensor,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>, NetGrads), NetworkError> {
    if batch.cores.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    check_batch(batch)?;
    let b = batch.cores.len();
    let scale = 1.0 / b as f64;

    let centered = batch_centered(batch, mean)?;
    let sel = net.selector.as_ref().ok_or(NetworkError::SelectorMissing)?;
    let ref_len: usize = net.config.ref_in.iter().product();
    let us = selector_batch_outputs(sel, &centered, ref_len);

    let per_sample: Vec<Result<SampleBackward, NetworkError>> =
        par::batch_map_indices(b, |i| {
            let core = &batch.cores[i];
            if core.shape() != net.config.core_in.as_slice() {
                return Err(NetworkError::ShapeChain(format!(
                    "core input shape {:?}, expected {:?}",
                    core.shape(),
                    net.config.core_in
                )));
            }
            let trace = net.forward_flat(core.data().to_vec(), us[i].clone());
            Ok(backward_sample(net, &trace, batch.ys[i], cfg.loss, scale))
        });
    let mut samples = Vec::with_capacity(b);
    for s in per_sample {
        samples.push(s?);
    }

    let mut grads = NetGrads::zeros_like(net, true);
    let mut total_loss = 0.0;
    let mut residuals = Vec::with_capacity(b);
    for s in &samples {
        grads.add_in_place(&s.grads);
        total_loss += s.loss;
        residuals.push(s.residual);
    }

    // Selector gradient: tiled outer(dU, x~) accumulation in sample
    // order, then the penalty subgradient.
    if let Some(grad_sel) = &mut grads.selector {
        let d_us: Vec<&[f64]> = samples.iter().map(|s| s.d_u.as_slice()).collect();
        selector_grad_accumulate(grad_sel, &d_us, &centered, ref_len);
        for (g, &w) in grad_sel.iter_mut().zip(sel.data()) {
            *g += clipped_l1_subgrad(w, cfg.lambda, cfg.tau);
        }
    }

    let mut value = total_loss * scale;
    if let Some(sel) = &net.selector {
        value += clipped_l1(sel, cfg.lambda, cfg.tau);
    }
    Ok((value, residuals, grads))
}

fn check_batch(batch: &Batch<'_>) -> Result<(), NetworkError> {
    if batch.cores.len() != batch.xs.len() || batch.cores.len() != batch.ys.len() {
        return Err(NetworkError::LengthMismatch(format!(
            "cores {}, xs {}, ys {}",
            batch.cores.len(),
            batch.xs.len(),
            batch.ys.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with classic L2 weight decay folded into the gradient of weight
/// tensors (biases, layer-norm parameters, and the selector are not
/// decayed; the selector is regularized by the clipped-L1 term instead).
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut DualChannelNet, grads: &NetGrads) {
        let grad_slices = grads.param_slices();
        let mut param_slices = net.param_slices_mut();
        assert_eq!(
            grad_slices.len(),
            param_slices.len(),
            "gradient leaves must mirror parameter leaves"
        );
        if self.m.is_empty() {
            self.m = grad_slices.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (leaf, ((kind, w), g)) in param_slices.iter_mut().zip(grad_slices).enumerate() {
            let m = &mut self.m[leaf];
            let v = &mut self.v[leaf];
            for j in 0..w.len() {
                let mut grad = g[j];
                if *kind == ParamKind::Weight && self.weight_decay != 0.0 {
                    grad += self.weight_decay * w[j];
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Objective value (data loss + penalty) averaged over the epoch's
    /// batches.
    pub epoch_loss: Vec<f64>,
    /// Residuals `output - y` over the full training set after the final
    /// epoch.
    pub residuals: Vec<f64>,
}

/// Two-stage training step two: fit the network and selector on frozen
/// cores by mini-batch Adam. Deterministic given `cfg.seed`.
pub fn train(
    net_config: NetConfig,
    cores: &[DenseTensor],
    xs: &[&DenseTensor],
    ys: &[f64],
    mean: &DenseTensor,
    cfg: &TrainConfig,
) -> Result<(DualChannelNet, TrainHistory), NetworkError> {
    if cores.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    if cores.len() != xs.len() || cores.len() != ys.len() {
        return Err(NetworkError::LengthMismatch(format!(
            "cores {}, xs {}, ys {}",
            cores.len(),
            xs.len(),
            ys.len()
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0xD1);
    let mut net = DualChannelNet::init(net_config, &mut init_rng);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(0xD2);

    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let n = cores.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let batches_per_epoch = n.div_ceil(cfg.batch_size.max(1));
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let b_cores: Vec<DenseTensor> = chunk.iter().map(|&i| cores[i].clone()).collect();
            let b_xs: Vec<&DenseTensor> = chunk.iter().map(|&i| xs[i]).collect();
            let b_ys: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let batch = Batch {
                cores: &b_cores,
                xs: &b_xs,
                ys: &b_ys,
            };
            let (value, _, grads) = batch_gradients(&net, &batch, mean, cfg)?;
            if !value.is_finite() {
                return Err(NetworkError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam.learning_rate = match cfg.lr_schedule {
                LrSchedule::Constant => cfg.learning_rate,
                LrSchedule::Cosine => {
                    let progress = step as f64 / total_steps as f64;
                    cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            };
            step += 1;
            adam.step(&mut net, &grads);
            if let Some(b) = net.config.weight_bound {
                net.clamp_weights(b);
            }
            epoch_total += value;
            batches += 1;
        }
        epoch_loss.push(epoch_total / batches as f64);
    }

    // Residuals over the full training set, recorded after training.
    let batch = Batch {
        cores,
        xs,
        ys,
    };
    let (_, residuals) = loss(&net, &batch, mean, cfg)?;
    Ok((
        net,
        TrainHistory {
            epoch_loss,
            residuals,
        },
    ))
}

// ---------------------------------------------------------------------------
// Prediction on raw covariates
// ---------------------------------------------------------------------------

/// Core-refinement representation of one covariate under a fitted model
/// and selector.
#[derive(Clone, Debug)]
pub struct Latent {
    pub core: DenseTensor,
    pub refinement: DenseTensor,
}

/// Predicted value for a raw covariate: project to the core, run the
/// selector and network. With a sigmoid link this is a probability.
pub fn predict_proba(
    net: &DualChannelNet,
    model: &DecompModel,
    x: &DenseTensor,
) -> Result<f64, NetworkError> {
    let (value, _) = predict_with_latent(net, model, x)?;
    Ok(value)
}

/// Prediction plus the latent point used to make it.
pub fn predict_with_latent(
    net: &DualChannelNet,
    model: &DecompModel,
    x: &DenseTensor,
) -> Result<(f64, Latent), NetworkError> {
    let core = model.project(x)?;
    let u = net.selector_output(x, model.train_mean())?;
    let trace = net.forward_parts(&core, &u)?;
    Ok((
        trace.output,
        Latent {
            core,
            refinement: u,
        },
    ))
}

/// Batched prediction with latents (data-parallel, order-preserving).
pub fn predict_batch(
    net: &DualChannelNet,
    model: &DecompModel,
    xs: &[&DenseTensor],
) -> Result<Vec<(f64, Latent)>, NetworkError> {
    let out: Vec<Result<(f64, Latent), NetworkError>> =
        par::batch_map(xs, |x| predict_with_latent(net, model, x));
    out.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

impl DualChannelNet {
    /// Named tensors for the checkpoint container, in parameter order.
    pub fn to_named_tensors(&self) -> Vec<(String, DenseTensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w_cc"), layer.w_cc.clone()));
            out.push((format!("layer{l}.w_cu"), layer.w_cu.clone()));
            out.push((format!("layer{l}.w_uc"), layer.w_uc.clone()));
            out.push((format!("layer{l}.w_uu"), layer.w_uu.clone()));
            out.push((format!("layer{l}.b_c"), layer.b_c.clone()));
            out.push((format!("layer{l}.b_u"), layer.b_u.clone()));
            if let Some(ln) = &layer.ln {
                for (name, v) in [
                    ("gamma_c", &ln.gamma_c),
                    ("beta_c", &ln.beta_c),
                    ("gamma_u", &ln.gamma_u),
                    ("beta_u", &ln.beta_u),
                ] {
                    out.push((
                        format!("layer{l}.{name}"),
                        DenseTensor::from_vec(&[v.len()], v.clone()),
                    ));
                }
            }
        }
        out.push(("out.w_c".into(), self.out_w_c.clone()));
        out.push(("out.w_u".into(), self.out_w_u.clone()));
        out.push(("out.b".into(), DenseTensor::scalar(self.out_b)));
        if let Some(sel) = &self.selector {
            out.push(("selector".into(), sel.clone()));
        }
        out
    }

    /// Rebuild from a config and the named tensors of a checkpoint.
    pub fn from_named_tensors(
        config: NetConfig,
        tensors: &[(String, DenseTensor)],
    ) -> Result<Self, NetworkError> {
        let lookup = |name: &str| -> Result<DenseTensor, NetworkError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| NetworkError::BadCheckpoint(format!("missing tensor {name}")))
        };
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let ln = if config.layer_norm {
                Some(LayerNormParams {
                    gamma_c: lookup(&format!("layer{l}.gamma_c"))?.into_vec(),
                    beta_c: lookup(&format!("layer{l}.beta_c"))?.into_vec(),
                    gamma_u: lookup(&format!("layer{l}.gamma_u"))?.into_vec(),
                    beta_u: lookup(&format!("layer{l}.beta_u"))?.into_vec(),
                })
            } else {
                None
            };
            layers.push(LayerWeights {
                w_cc: lookup(&format!("layer{l}.w_cc"))?,
                w_cu: lookup(&format!("layer{l}.w_cu"))?,
                w_uc: lookup(&format!("layer{l}.w_uc"))?,
                w_uu: lookup(&format!("layer{l}.w_uu"))?,
                b_c: lookup(&format!("layer{l}.b_c"))?,
                b_u: lookup(&format!("layer{l}.b_u"))?,
                ln,
            });
        }
        let out_b_t = lookup("out.b")?;
        let selector = if config.selector_dims.is_some() {
            Some(lookup("selector")?)
        } else {
            None
        };
        Ok(Self {
            layers,
            out_w_c: lookup("out.w_c")?,
            out_w_u: lookup("out.w_u")?,
            out_b: out_b_t.data()[0],
            selector,
            config,
        })
    }
}
