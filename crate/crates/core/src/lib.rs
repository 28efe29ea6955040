//! Dual-channel tensor network library.
//!
//! The crate is organized around a single pipeline for learning from
//! tensor-valued covariates with heterogeneous structure:
//!
//! * [`tensor`] — dense N-mode tensor algebra (unfolding, mode products,
//!   generalized contraction, rank-1 constructions).
//! * [`decomp`] — shared low-rank structure estimation across a sample of
//!   tensors: Tucker loadings via HOSVD + HOOI, CP factors via ALS, and
//!   per-sample core extraction.
//! * [`network`] — the coupled two-channel ReLU tensor network with a
//!   sparse refinement selector, clipped-L1 penalty, analytic gradients,
//!   and Adam training.
//! * [`conformal`] — structure-aware conformal inference in the
//!   core-refinement latent space: probability intervals, pointwise ROC
//!   bands, and AUC confidence intervals.
//! * [`selector`] — distribution-free selection between two candidate
//!   decompositions via difference-ROC bands.
//! * [`simgen`] — the synthetic data-generating process used by the
//!   simulation harness and the coverage experiments.
//! * [`io`] — binary tensor container and JSON/CSV artifact formats.
//!
//! Batched per-sample maps are data-parallel when the `parallel` feature
//! is enabled (the default) and fall back to plain iteration otherwise;
//! both paths produce bit-identical results.

pub mod conformal;
pub mod decomp;
pub mod io;
pub mod linalg;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod selector;
pub mod simgen;
pub mod tensor;

pub use tensor::{DenseTensor, Matrix, TensorError};
