//! Shared low-rank structure estimation across a sample of tensors.
//!
//! Both estimators center the sample by its mean and work on the mode-m
//! sample covariance `sum_i unfold(X~_i, m) unfold(X~_i, m)^T / n`:
//!
//! * Tucker: HOSVD initialization (top eigenvectors per mode) followed by
//!   HOOI refinement, giving orthonormal loadings and per-sample cores
//!   `C~_i = X~_i x_1 A_1^T ... x_M A_M^T`.
//! * CP: covariance-PCA initialization followed by alternating least
//!   squares on the sample-stacked tensor with the sample mode
//!   unconstrained; per-sample coefficients solve `G c = m` with
//!   `G = hadamard_m(A_m^T A_m)` and `m(r) = <X~, a_1r o ... o a_Mr>`.
//!
//! Fitting is single-threaded and deterministic; per-sample projection is
//! pure and batched through [`crate::par`].

use crate::linalg::{
    self, cholesky_solve, dominant_sign, lu_solve, principal_angles, sym_eig, LinalgError,
};
use crate::par;
use crate::tensor::{dot, DenseTensor, Matrix, TensorError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DecompError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("requested rank {rank} exceeds dimension {dim} on mode {mode}")]
    RankExceedsDim { mode: usize, rank: usize, dim: usize },
    #[error("gram matrix is singular or ill-conditioned (cond {cond:.3e}); lower the rank")]
    GramIllConditioned { cond: f64 },
    #[error("component {0} collapsed to zero norm during ALS")]
    DegenerateComponent(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which low-rank structure a model or core batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Tucker,
    Cp,
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Structure::Tucker => write!(f, "tucker"),
            Structure::Cp => write!(f, "cp"),
        }
    }
}

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

/// Estimated Tucker loadings with orthonormal columns, plus the training
/// mean used for centering.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuckerModel {
    pub loadings: Vec<Matrix>,
    pub ranks: Vec<usize>,
    pub train_mean: DenseTensor,
}

/// Estimated CP factors with unit-norm columns, their Hadamard gram, and
/// the training mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CpModel {
    pub factors: Vec<Matrix>,
    pub rank: usize,
    pub gram: Matrix,
    pub train_mean: DenseTensor,
}

/// Either fitted structure behind one projection interface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum DecompModel {
    Tucker(TuckerModel),
    Cp(CpModel),
}

/// Per-sample cores extracted by a fitted model. Tucker cores keep the
/// full `R_1 x ... x R_M` shape; CP cores are the coefficient vectors as
/// one-mode tensors (the super-diagonal embedding is available via
/// [`embed_superdiag`]).
#[derive(Clone, Debug)]
pub struct CoreBatch {
    pub cores: Vec<DenseTensor>,
    pub structure: Structure,
}

/// Fit result bundling the model with its per-iteration objective trace.
#[derive(Clone, Debug)]
pub struct TuckerFit {
    pub model: TuckerModel,
    /// Explained energy `sum_i ||project(x_i)||_F^2` after the HOSVD init
    /// and after each HOOI iteration; non-decreasing.
    pub energy_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct CpFit {
    pub model: CpModel,
    /// Stacked-tensor residual norm after each sweep; non-increasing.
    pub residual_history: Vec<f64>,
    pub sweeps: usize,
}

// ---------------------------------------------------------------------------
// Tucker: HOSVD + HOOI
// ---------------------------------------------------------------------------

pub fn fit_tucker(
    samples: &[DenseTensor],
    ranks: &[usize],
    hooi_iters: usize,
    tol: f64,
) -> Result<TuckerFit, DecompError> {
    if samples.len() < 2 {
        return Err(DecompError::TooFewSamples(samples.len()));
    }
    let dims = samples[0].shape().to_vec();
    assert_eq!(ranks.len(), dims.len(), "one rank per mode");
    for (m, (&r, &d)) in ranks.iter().zip(&dims).enumerate() {
        if r > d {
            return Err(DecompError::RankExceedsDim {
                mode: m,
                rank: r,
                dim: d,
            });
        }
    }
    let mean = DenseTensor::mean_of(samples)?;
    let n = samples.len() as f64;
    let centered: Vec<DenseTensor> = samples
        .iter()
        .map(|x| x.sub(&mean))
        .collect::<Result<_, _>>()?;

    // HOSVD init: top eigenvectors of each raw mode covariance.
    let mut loadings = Vec::with_capacity(dims.len());
    for m in 0..dims.len() {
        let mut cov = Matrix::zeros(dims[m], dims[m]);
        for x in &centered {
            let unf = x.unfold(m)?;
            accumulate_gram(&mut cov, &unf);
        }
        scale(&mut cov, 1.0 / n);
        loadings.push(top_eigenvectors(&cov, ranks[m], m)?);
    }

    let mut energy_history = vec![explained_energy(&centered, &loadings)?];
    let mut iterations = 0;

    // HOOI: re-solve each mode's eigenproblem on samples pre-projected
    // along all other modes.
    for _ in 0..hooi_iters {
        let mut max_change = 0.0f64;
        for m in 0..dims.len() {
            let mut cov = Matrix::zeros(dims[m], dims[m]);
            for x in &centered {
                let mut proj = x.clone();
                for (m2, a) in loadings.iter().enumerate() {
                    if m2 != m {
                        proj = proj.mode_product(&a.transpose(), m2)?;
                    }
                }
                let unf = proj.unfold(m)?;
                accumulate_gram(&mut cov, &unf);
            }
            scale(&mut cov, 1.0 / n);
            let fresh = top_eigenvectors(&cov, ranks[m], m)?;
            let angles = principal_angles(&fresh, &loadings[m])?;
            let change = angles.last().copied().unwrap_or(0.0);
            max_change = max_change.max(change);
            loadings[m] = fresh;
        }
        iterations += 1;
        energy_history.push(explained_energy(&centered, &loadings)?);
        if max_change < tol {
            break;
        }
    }

    Ok(TuckerFit {
        model: TuckerModel {
            loadings,
            ranks: ranks.to_vec(),
            train_mean: mean,
        },
        energy_history,
        iterations,
    })
}

/// Core extraction: `(x - mean) x_1 A_1^T ... x_M A_M^T`.
pub fn project_tucker(model: &TuckerModel, x: &DenseTensor) -> Result<DenseTensor, DecompError> {
    let mut core = x.sub(&model.train_mean)?;
    for (m, a) in model.loadings.iter().enumerate() {
        core = core.mode_product(&a.transpose(), m)?;
    }
    Ok(core)
}

fn explained_energy(centered: &[DenseTensor], loadings: &[Matrix]) -> Result<f64, DecompError> {
    let mut total = 0.0;
    for x in centered {
        let mut core = x.clone();
        for (m, a) in loadings.iter().enumerate() {
            core = core.mode_product(&a.transpose(), m)?;
        }
        let nrm = core.frobenius_norm();
        total += nrm * nrm;
    }
    Ok(total)
}

fn accumulate_gram(cov: &mut Matrix, unf: &Matrix) {
    // cov += unf unf^T, exploiting symmetry.
    let d = unf.rows;
    for a in 0..d {
        let ra = unf.row(a);
        for b in 0..=a {
            let v = dot(ra, unf.row(b));
            let cur = cov.get(a, b) + v;
            cov.set(a, b, cur);
            if a != b {
                cov.set(b, a, cur);
            }
        }
    }
}

fn scale(m: &mut Matrix, s: f64) {
    for x in &mut m.data {
        *x *= s;
    }
}

/// Top-`rank` eigenvectors of a symmetric covariance, signs fixed. Warns
/// and proceeds with trailing eigenvectors when the covariance rank falls
/// below the requested rank.
fn top_eigenvectors(cov: &Matrix, rank: usize, mode: usize) -> Result<Matrix, DecompError> {
    let eig = sym_eig(cov)?;
    let eps = 1e-12 * eig.values.first().copied().unwrap_or(0.0).abs().max(1e-300);
    let positive = eig.values.iter().filter(|&&v| v > eps).count();
    if positive < rank {
        log::warn!(
            "mode {mode}: covariance rank {positive} below requested rank {rank}; \
             proceeding with trailing eigenvectors"
        );
    }
    Ok(eig.vectors.truncate_cols(rank))
}

// ---------------------------------------------------------------------------
// CP: covariance-PCA init + ALS
// ---------------------------------------------------------------------------

/// The seed is reserved for randomized tie-breaking; the default path
/// (covariance-PCA init + deterministic sweeps) never consumes it.
pub fn fit_cp(
    samples: &[DenseTensor],
    rank: usize,
    als_iters: usize,
    tol: f64,
    _seed: u64,
) -> Result<CpFit, DecompError> {
    if samples.len() < 2 {
        return Err(DecompError::TooFewSamples(samples.len()));
    }
    let dims = samples[0].shape().to_vec();
    let n_modes = dims.len();
    for (m, &d) in dims.iter().enumerate() {
        if rank > d {
            return Err(DecompError::RankExceedsDim {
                mode: m,
                rank,
                dim: d,
            });
        }
    }
    let mean = DenseTensor::mean_of(samples)?;
    let n = samples.len();
    let centered: Vec<DenseTensor> = samples
        .iter()
        .map(|x| x.sub(&mean))
        .collect::<Result<_, _>>()?;
    let total_sq: f64 = centered
        .iter()
        .map(|x| {
            let f = x.frobenius_norm();
            f * f
        })
        .sum();

    // Covariance-PCA init per mode (eigenvectors already unit norm).
    let mut factors = Vec::with_capacity(n_modes);
    for m in 0..n_modes {
        let mut cov = Matrix::zeros(dims[m], dims[m]);
        for x in &centered {
            let unf = x.unfold(m)?;
            accumulate_gram(&mut cov, &unf);
        }
        scale(&mut cov, 1.0 / n as f64);
        factors.push(top_eigenvectors(&cov, rank, m)?);
    }

    // Coefficients for the unconstrained sample mode.
    let mut coeffs = solve_coefficients(&centered, &factors, rank)?;
    let mut residual_history = vec![residual_norm(&centered, &factors, &coeffs, total_sq, rank)?];
    let mut sweeps = 0;
    let mut prev_fit = relative_fit(residual_history[0], total_sq);

    for _ in 0..als_iters {
        for m in 0..n_modes {
            // mttkrp: M[d, r] = sum_i c_ir * (x~_i contracted with the
            // other modes' r-th columns)[d].
            let mut mk = Matrix::zeros(dims[m], rank);
            for (x, c_row) in centered.iter().zip(coeffs.iter()) {
                let w = krp_weights(x, &factors, m, rank)?;
                for d in 0..dims[m] {
                    let wrow = &w[d * rank..(d + 1) * rank];
                    let dst = &mut mk.data[d * rank..(d + 1) * rank];
                    for ((slot, &cv), &wv) in dst.iter_mut().zip(c_row).zip(wrow) {
                        *slot += cv * wv;
                    }
                }
            }
            // LS gram: hadamard over the coefficient gram and the other
            // factors' grams.
            let mut v = coeff_gram(&coeffs, rank);
            for (m2, a) in factors.iter().enumerate() {
                if m2 != m {
                    hadamard_in_place(&mut v, &gram_of(a));
                }
            }
            // Solve V a_d = mk_d for every row d of the new factor.
            let mut fresh = Matrix::zeros(dims[m], rank);
            for d in 0..dims[m] {
                let rhs: Vec<f64> = (0..rank).map(|r| mk.get(d, r)).collect();
                let row = match cholesky_solve(&v, &rhs) {
                    Ok(x) => x,
                    Err(_) => lu_solve(&v, &rhs)?,
                };
                for (r, &x) in row.iter().enumerate() {
                    fresh.set(d, r, x);
                }
            }
            // Normalize columns, absorbing norms and sign flips into the
            // coefficients so the represented tensor is unchanged.
            for r in 0..rank {
                let mut col = fresh.col(r);
                let nrm = dot(&col, &col).sqrt();
                if nrm < 1e-300 {
                    return Err(DecompError::DegenerateComponent(r));
                }
                for x in col.iter_mut() {
                    *x /= nrm;
                }
                let sign = dominant_sign(&col);
                if sign < 0.0 {
                    for x in col.iter_mut() {
                        *x = -*x;
                    }
                }
                fresh.set_col(r, &col);
                for c_row in coeffs.iter_mut() {
                    c_row[r] *= sign * nrm;
                }
            }
            factors[m] = fresh;
        }
        // Exact coefficient re-solve closes the sweep.
        coeffs = solve_coefficients(&centered, &factors, rank)?;
        sweeps += 1;
        let resid = residual_norm(&centered, &factors, &coeffs, total_sq, rank)?;
        residual_history.push(resid);
        let fit = relative_fit(resid, total_sq);
        if (prev_fit - fit).abs() < tol {
            break;
        }
        prev_fit = fit;
    }

    let model = CpModel::new(factors, mean)?;
    Ok(CpFit {
        model,
        residual_history,
        sweeps,
    })
}

impl CpModel {
    /// Assemble a model from unit-norm factors, validating the gram.
    ///
    /// Errors when the gram is not positive definite or its condition
    /// number exceeds 1e12 (near-duplicate components); the fix is a
    /// lower rank.
    pub fn new(factors: Vec<Matrix>, train_mean: DenseTensor) -> Result<Self, DecompError> {
        let rank = factors[0].cols;
        let mut gram = gram_of(&factors[0]);
        for a in &factors[1..] {
            hadamard_in_place(&mut gram, &gram_of(a));
        }
        let eig = sym_eig(&gram)?;
        let max = eig.values.first().copied().unwrap_or(0.0);
        let min = eig.values.last().copied().unwrap_or(0.0);
        if min <= 0.0 || max / min > 1e12 {
            let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
            return Err(DecompError::GramIllConditioned { cond });
        }
        Ok(Self {
            factors,
            rank,
            gram,
            train_mean,
        })
    }
}

/// Coefficient extraction: `m(r) = <x - mean, a_1r o ... o a_Mr>`, then
/// the linear solve `G c = m`.
pub fn project_cp(model: &CpModel, x: &DenseTensor) -> Result<Vec<f64>, DecompError> {
    let centered = x.sub(&model.train_mean)?;
    let m_vec = inner_products(&centered, &model.factors, model.rank)?;
    let c = match cholesky_solve(&model.gram, &m_vec) {
        Ok(c) => c,
        Err(_) => lu_solve(&model.gram, &m_vec)?,
    };
    Ok(c)
}

/// Super-diagonal embedding of a coefficient vector into an M-mode cube.
pub fn embed_superdiag(c: &[f64], n_modes: usize) -> DenseTensor {
    assert!(!c.is_empty() && n_modes >= 1);
    let r = c.len();
    let shape = vec![r; n_modes];
    let mut t = DenseTensor::zeros(&shape);
    // Step between consecutive diagonal entries in the last-mode-fastest
    // layout: 1 + r + r^2 + ...
    let mut stride = 0usize;
    let mut mult = 1usize;
    for _ in 0..n_modes {
        stride += mult;
        mult *= r;
    }
    for (i, &v) in c.iter().enumerate() {
        t.data_mut()[i * stride] = v;
    }
    t
}

fn solve_coefficients(
    centered: &[DenseTensor],
    factors: &[Matrix],
    rank: usize,
) -> Result<Vec<Vec<f64>>, DecompError> {
    let mut gram = gram_of(&factors[0]);
    for a in &factors[1..] {
        hadamard_in_place(&mut gram, &gram_of(a));
    }
    let mut out = Vec::with_capacity(centered.len());
    for x in centered {
        let m_vec = inner_products(x, factors, rank)?;
        let c = match cholesky_solve(&gram, &m_vec) {
            Ok(c) => c,
            Err(_) => lu_solve(&gram, &m_vec)?,
        };
        out.push(c);
    }
    Ok(out)
}

// The component-tied contractions below keep the component index as a
// trailing dimension so the covariate streams through once per stage
// with contiguous component-wide inner loops.

/// `P[row * R + r] = sum_d x[row * d_last + d] * a[d, r]`.
fn matmul_last(data: &[f64], rows: usize, d_last: usize, a: &Matrix) -> Vec<f64> {
    let r_dim = a.cols;
    let mut out = vec![0.0; rows * r_dim];
    for row in 0..rows {
        let src = &data[row * d_last..(row + 1) * d_last];
        let dst = &mut out[row * r_dim..(row + 1) * r_dim];
        for (d, &xv) in src.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (slot, &av) in dst.iter_mut().zip(a.row(d)) {
                *slot += xv * av;
            }
        }
    }
    out
}

/// `P[pos * R + r] = sum_d x[d * rest + pos] * a[d, r]`.
fn matmul_first(data: &[f64], d_first: usize, rest: usize, a: &Matrix) -> Vec<f64> {
    let r_dim = a.cols;
    let mut out = vec![0.0; rest * r_dim];
    for d in 0..d_first {
        let arow = a.row(d);
        let src = &data[d * rest..(d + 1) * rest];
        for (pos, &xv) in src.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dst = &mut out[pos * r_dim..(pos + 1) * r_dim];
            for (slot, &av) in dst.iter_mut().zip(arow) {
                *slot += xv * av;
            }
        }
    }
    out
}

/// Remove `mode` from a `[shape..., R]` array by contracting with the
/// component-matched columns of `a`:
/// `out[idx-, r] = sum_d p[idx(d), r] * a[d, r]`.
fn tie_contract(
    p: &[f64],
    shape: &[usize],
    r_dim: usize,
    mode: usize,
    a: &Matrix,
) -> (Vec<f64>, Vec<usize>) {
    let dm = shape[mode];
    let outer: usize = shape[..mode].iter().product();
    let inner = shape[mode + 1..].iter().product::<usize>() * r_dim;
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for d in 0..dm {
            let arow = a.row(d);
            let src = &p[(o * dm + d) * inner..(o * dm + d + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (cd, cs) in dst.chunks_mut(r_dim).zip(src.chunks(r_dim)) {
                for ((slot, &x), &av) in cd.iter_mut().zip(cs).zip(arow) {
                    *slot += x * av;
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.remove(mode);
    (out, new_shape)
}

/// Full component inner products `m(r) = <x, a_1r o ... o a_Mr>`.
fn inner_products(
    x: &DenseTensor,
    factors: &[Matrix],
    rank: usize,
) -> Result<Vec<f64>, DecompError> {
    let shape = x.shape();
    let m_last = shape.len() - 1;
    let rows: usize = shape[..m_last].iter().product();
    let mut p = matmul_last(x.data(), rows, shape[m_last], &factors[m_last]);
    let mut pshape = shape[..m_last].to_vec();
    for m in 0..m_last {
        // Mode m is always at position 0: earlier modes are already gone.
        let (q, qs) = tie_contract(&p, &pshape, rank, 0, &factors[m]);
        p = q;
        pshape = qs;
    }
    debug_assert_eq!(p.len(), rank);
    Ok(p)
}

/// Khatri-Rao weight block for updating mode `skip`: a
/// `dims[skip] x R` row-major buffer where entry (d, r) is `x`
/// contracted with the r-th factor columns on every mode except `skip`.
fn krp_weights(
    x: &DenseTensor,
    factors: &[Matrix],
    skip: usize,
    rank: usize,
) -> Result<Vec<f64>, DecompError> {
    let shape = x.shape();
    let m_last = shape.len() - 1;
    if shape.len() == 1 {
        // Nothing to contract; every component sees x itself.
        let mut out = vec![0.0; shape[0] * rank];
        for (d, &xv) in x.data().iter().enumerate() {
            for r in 0..rank {
                out[d * rank + r] = xv;
            }
        }
        return Ok(out);
    }
    let (mut p, mut pshape, contract_modes): (Vec<f64>, Vec<usize>, Vec<usize>) = if skip == m_last
    {
        let rest: usize = shape[1..].iter().product();
        (
            matmul_first(x.data(), shape[0], rest, &factors[0]),
            shape[1..].to_vec(),
            (1..m_last).collect(),
        )
    } else {
        let rows: usize = shape[..m_last].iter().product();
        (
            matmul_last(x.data(), rows, shape[m_last], &factors[m_last]),
            shape[..m_last].to_vec(),
            (0..m_last).filter(|&m| m != skip).collect(),
        )
    };
    let mut remaining: Vec<usize> = if skip == m_last {
        (1..m_last).chain(std::iter::once(m_last)).collect()
    } else {
        (0..m_last).collect()
    };
    // Drop the trailing kept mode from the bookkeeping view.
    if skip == m_last {
        remaining.pop();
    }
    for m in contract_modes {
        let pos = remaining
            .iter()
            .position(|&o| o == m)
            .expect("mode not yet contracted");
        let (q, qs) = tie_contract(&p, &pshape, rank, pos, &factors[m]);
        p = q;
        pshape = qs;
        remaining.remove(pos);
    }
    debug_assert_eq!(p.len(), shape[skip] * rank);
    Ok(p)
}

fn gram_of(a: &Matrix) -> Matrix {
    let at = a.transpose();
    at.matmul(a)
}

fn hadamard_in_place(a: &mut Matrix, b: &Matrix) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x *= y;
    }
}

fn coeff_gram(coeffs: &[Vec<f64>], rank: usize) -> Matrix {
    let mut g = Matrix::zeros(rank, rank);
    for row in coeffs {
        for a in 0..rank {
            for b in 0..=a {
                let v = g.get(a, b) + row[a] * row[b];
                g.set(a, b, v);
                if a != b {
                    g.set(b, a, v);
                }
            }
        }
    }
    g
}

/// `||X~ - model||_F` over the stacked sample via the expanded square,
/// clamped at zero against roundoff.
fn residual_norm(
    centered: &[DenseTensor],
    factors: &[Matrix],
    coeffs: &[Vec<f64>],
    total_sq: f64,
    rank: usize,
) -> Result<f64, DecompError> {
    let mut gram = gram_of(&factors[0]);
    for a in &factors[1..] {
        hadamard_in_place(&mut gram, &gram_of(a));
    }
    let mut cross = 0.0;
    let mut model_sq = 0.0;
    for (x, c) in centered.iter().zip(coeffs) {
        let m_vec = inner_products(x, factors, rank)?;
        cross += dot(c, &m_vec);
        model_sq += dot(c, &gram.matvec(c));
    }
    Ok((total_sq - 2.0 * cross + model_sq).max(0.0).sqrt())
}

fn relative_fit(residual: f64, total_sq: f64) -> f64 {
    if total_sq <= 0.0 {
        0.0
    } else {
        1.0 - residual / total_sq.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Unified interface
// ---------------------------------------------------------------------------

impl DecompModel {
    pub fn structure(&self) -> Structure {
        match self {
            DecompModel::Tucker(_) => Structure::Tucker,
            DecompModel::Cp(_) => Structure::Cp,
        }
    }

    pub fn train_mean(&self) -> &DenseTensor {
        match self {
            DecompModel::Tucker(m) => &m.train_mean,
            DecompModel::Cp(m) => &m.train_mean,
        }
    }

    /// Core representation of one covariate: the Tucker core tensor, or
    /// the CP coefficient vector as a one-mode tensor.
    pub fn project(&self, x: &DenseTensor) -> Result<DenseTensor, DecompError> {
        match self {
            DecompModel::Tucker(m) => project_tucker(m, x),
            DecompModel::Cp(m) => {
                let c = project_cp(m, x)?;
                let r = c.len();
                Ok(DenseTensor::from_vec(&[r], c))
            }
        }
    }

    /// Batched projection over samples (data-parallel, order-preserving).
    pub fn project_batch(&self, xs: &[DenseTensor]) -> Result<CoreBatch, DecompError> {
        let cores: Vec<Result<DenseTensor, DecompError>> = par::batch_map(xs, |x| self.project(x));
        let mut out = Vec::with_capacity(cores.len());
        for c in cores {
            out.push(c?);
        }
        Ok(CoreBatch {
            cores: out,
            structure: self.structure(),
        })
    }

    /// Shape of the core representation this model produces.
    pub fn core_shape(&self) -> Vec<usize> {
        match self {
            DecompModel::Tucker(m) => m.ranks.clone(),
            DecompModel::Cp(m) => vec![m.rank],
        }
    }
}

/// On-disk form of a fitted model: shapes, ranks, flattened matrices,
/// and a file reference for the mean tensor (stored separately in the
/// binary container).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompModelFile {
    pub structure: Structure,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub matrices: Vec<Matrix>,
    pub gram: Option<Matrix>,
    pub mean_ref: String,
}

impl DecompModelFile {
    pub fn from_model(model: &DecompModel, mean_ref: &str) -> Self {
        match model {
            DecompModel::Tucker(m) => Self {
                structure: Structure::Tucker,
                dims: m.train_mean.shape().to_vec(),
                ranks: m.ranks.clone(),
                matrices: m.loadings.clone(),
                gram: None,
                mean_ref: mean_ref.to_string(),
            },
            DecompModel::Cp(m) => Self {
                structure: Structure::Cp,
                dims: m.train_mean.shape().to_vec(),
                ranks: vec![m.rank],
                matrices: m.factors.clone(),
                gram: Some(m.gram.clone()),
                mean_ref: mean_ref.to_string(),
            },
        }
    }

    /// Rebuild the model given the mean tensor the reference points to.
    /// The CP gram is recomputed and revalidated rather than trusted.
    pub fn into_model(self, mean: DenseTensor) -> Result<DecompModel, DecompError> {
        match self.structure {
            Structure::Tucker => Ok(DecompModel::Tucker(TuckerModel {
                loadings: self.matrices,
                ranks: self.ranks,
                train_mean: mean,
            })),
            Structure::Cp => Ok(DecompModel::Cp(CpModel::new(self.matrices, mean)?)),
        }
    }
}

/// Alignment diagnostic against ground-truth loadings: the smallest
/// singular value of `A_hat_m^T A_m` per mode (near 1 means the
/// estimated subspace contains the truth, near 0 a lost direction).
pub fn loading_alignment(estimated: &[Matrix], truth: &[Matrix]) -> Result<Vec<f64>, DecompError> {
    let mut out = Vec::with_capacity(estimated.len());
    for (e, t) in estimated.iter().zip(truth) {
        let g = e.transpose().matmul(t);
        let sv = linalg::singular_values(&g)?;
        out.push(sv.last().copied().unwrap_or(0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_thin_q;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Matrix {
        let a = Matrix::from_fn(d, r, |_, _| rng.gen_range(-5.0..5.0));
        qr_thin_q(&a)
    }

    fn planted_tucker_samples(
        rng: &mut ChaCha8Rng,
        n: usize,
        dims: &[usize],
        ranks: &[usize],
    ) -> (Vec<DenseTensor>, Vec<Matrix>) {
        let loadings: Vec<Matrix> = dims
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| random_orthonormal(rng, d, r))
            .collect();
        let samples = (0..n)
            .map(|_| {
                let core = DenseTensor::from_fn(ranks, |_| rng.sample(StandardNormal));
                let mut x = core;
                for (m, a) in loadings.iter().enumerate() {
                    x = x.mode_product(a, m).unwrap();
                }
                x
            })
            .collect();
        (samples, loadings)
    }

    #[test]
    fn tucker_recovers_planted_subspaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let (samples, truth) = planted_tucker_samples(&mut rng, 40, &[10, 9, 8], &[3, 3, 3]);
        let fit = fit_tucker(&samples, &[3, 3, 3], 50, 1e-10).unwrap();
        for (a_hat, a) in fit.model.loadings.iter().zip(&truth) {
            let angles = principal_angles(a, a_hat).unwrap();
            let max = angles.last().copied().unwrap();
            assert!(max < 1e-8, "principal angle too large: {max}");
        }
    }

    #[test]
    fn tucker_overspecified_rank_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let (samples, truth) = planted_tucker_samples(&mut rng, 40, &[10, 9, 8], &[3, 3, 3]);
        let fit = fit_tucker(&samples, &[4, 4, 4], 50, 1e-10).unwrap();
        for (a_hat, a) in fit.model.loadings.iter().zip(&truth) {
            // The true 3-dim span must sit inside the estimated 4-dim
            // span: all three principal angles vanish.
            let angles = principal_angles(a, a_hat).unwrap();
            let max = angles.last().copied().unwrap();
            assert!(max < 1e-6, "containment angle too large: {max}");
        }
    }

    #[test]
    fn tucker_single_mode_reduces_to_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let n = 60;
        let d = 8;
        let samples: Vec<DenseTensor> = (0..n)
            .map(|_| DenseTensor::from_fn(&[d], |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = fit_tucker(&samples, &[2], 0, 1e-8).unwrap();
        // Direct PCA oracle on the sample covariance.
        let mean = DenseTensor::mean_of(&samples).unwrap();
        let mut cov = Matrix::zeros(d, d);
        for x in &samples {
            let xc = x.sub(&mean).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let v = cov.get(i, j) + xc.data()[i] * xc.data()[j] / n as f64;
                    cov.set(i, j, v);
                }
            }
        }
        let eig = sym_eig(&cov).unwrap();
        for c in 0..2 {
            let est = fit.model.loadings[0].col(c);
            let truth = eig.vectors.col(c);
            let cos = dot(&est, &truth);
            assert!((cos - 1.0).abs() < 1e-9, "column {c} cosine {cos}");
        }
    }

    #[test]
    fn project_tucker_mean_gives_zero_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let (samples, _) = planted_tucker_samples(&mut rng, 20, &[6, 5, 4], &[2, 2, 2]);
        let fit = fit_tucker(&samples, &[2, 2, 2], 20, 1e-9).unwrap();
        let core = project_tucker(&fit.model, &fit.model.train_mean.clone()).unwrap();
        assert!(core.frobenius_norm() < 1e-12);
    }

    #[test]
    fn project_tucker_reconstructs_noise_free_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let (samples, _) = planted_tucker_samples(&mut rng, 40, &[10, 9, 8], &[3, 3, 3]);
        let fit = fit_tucker(&samples, &[3, 3, 3], 50, 1e-10).unwrap();
        for x in samples.iter().take(5) {
            let core = project_tucker(&fit.model, x).unwrap();
            let mut recon = core;
            for (m, a) in fit.model.loadings.iter().enumerate() {
                recon = recon.mode_product(a, m).unwrap();
            }
            let centered = x.sub(&fit.model.train_mean).unwrap();
            let err = recon.sub(&centered).unwrap().frobenius_norm();
            let rel = err / centered.frobenius_norm();
            assert!(rel < 1e-8, "relative reconstruction error {rel}");
        }
    }

    #[test]
    fn project_tucker_is_linear_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let (samples, _) = planted_tucker_samples(&mut rng, 20, &[6, 5, 4], &[2, 2, 2]);
        let fit = fit_tucker(&samples, &[2, 2, 2], 20, 1e-9).unwrap();
        let x = &samples[0];
        let noise = DenseTensor::from_fn(&[6, 5, 4], |_| {
            0.01 * rng.sample::<f64, StandardNormal>(StandardNormal)
        });
        let lhs = project_tucker(&fit.model, &x.add(&noise).unwrap()).unwrap();
        // project(x + V) = project(x) + V x_m A_m^T
        let mut vproj = noise.clone();
        for (m, a) in fit.model.loadings.iter().enumerate() {
            vproj = vproj.mode_product(&a.transpose(), m).unwrap();
        }
        let rhs = project_tucker(&fit.model, x).unwrap().add(&vproj).unwrap();
        assert!(lhs.sub(&rhs).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn tucker_projection_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let (mut samples, _) = planted_tucker_samples(&mut rng, 20, &[6, 5, 4], &[2, 2, 2]);
        for x in &mut samples {
            let noise = DenseTensor::from_fn(&[6, 5, 4], |_| {
                0.3 * rng.sample::<f64, StandardNormal>(StandardNormal)
            });
            *x = x.add(&noise).unwrap();
        }
        let fit = fit_tucker(&samples, &[2, 2, 2], 20, 1e-9).unwrap();
        for x in &samples {
            let core = project_tucker(&fit.model, x).unwrap();
            let centered = x.sub(&fit.model.train_mean).unwrap();
            assert!(core.frobenius_norm() <= centered.frobenius_norm() + 1e-12);
        }
    }

    #[test]
    fn hooi_energy_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let (mut samples, _) = planted_tucker_samples(&mut rng, 30, &[8, 7, 6], &[2, 2, 2]);
        for x in &mut samples {
            let noise = DenseTensor::from_fn(&[8, 7, 6], |_| {
                rng.sample::<f64, StandardNormal>(StandardNormal)
            });
            *x = x.add(&noise).unwrap();
        }
        let fit = fit_tucker(&samples, &[2, 2, 2], 15, 0.0).unwrap();
        for w in fit.energy_history.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "energy decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn cp_recovers_rank_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let dims = [9, 8, 7];
        let truth: Vec<Vec<f64>> = dims
            .iter()
            .map(|&d| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nrm = dot(&v, &v).sqrt();
                for x in &mut v {
                    *x /= nrm;
                }
                if dominant_sign(&v) < 0.0 {
                    for x in &mut v {
                        *x = -*x;
                    }
                }
                v
            })
            .collect();
        let basis =
            DenseTensor::outer_rank1(&truth.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
        let samples: Vec<DenseTensor> = (0..30)
            .map(|_| basis.scaled(rng.gen_range(-3.0..3.0)))
            .collect();
        let fit = fit_cp(&samples, 1, 100, 1e-10, 0).unwrap();
        for (m, t) in truth.iter().enumerate() {
            let est = fit.model.factors[m].col(0);
            let cos = dot(&est, t).abs();
            assert!(cos >= 1.0 - 1e-8, "mode {m} cosine {cos}");
        }
    }

    #[test]
    fn cp_als_residual_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let dims = [8, 7, 6];
        let samples: Vec<DenseTensor> = (0..25)
            .map(|_| DenseTensor::from_fn(&dims, |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = fit_cp(&samples, 3, 25, 0.0, 0).unwrap();
        for w in fit.residual_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-10 * w[0].max(1.0),
                "residual increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn cp_duplicate_components_fail_gram_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let mut factors = Vec::new();
        for &d in &[6usize, 5, 4] {
            let q = random_orthonormal(&mut rng, d, 1);
            let col = q.col(0);
            let mut m = Matrix::zeros(d, 2);
            m.set_col(0, &col);
            m.set_col(1, &col);
            factors.push(m);
        }
        let mean = DenseTensor::zeros(&[6, 5, 4]);
        assert!(matches!(
            CpModel::new(factors, mean),
            Err(DecompError::GramIllConditioned { .. })
        ));
    }

    #[test]
    fn project_cp_mean_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let dims = [8, 7, 6];
        let samples: Vec<DenseTensor> = (0..20)
            .map(|_| DenseTensor::from_fn(&dims, |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = fit_cp(&samples, 2, 20, 1e-9, 0).unwrap();
        let c = project_cp(&fit.model, &fit.model.train_mean.clone()).unwrap();
        assert!(c.iter().all(|&x| x.abs() < 1e-10));
    }

    #[test]
    fn project_cp_orthogonal_factors_give_direct_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let dims = [8, 7, 6];
        let factors: Vec<Matrix> = dims
            .iter()
            .map(|&d| random_orthonormal(&mut rng, d, 3))
            .collect();
        let mean = DenseTensor::zeros(&dims);
        let model = CpModel::new(factors.clone(), mean).unwrap();
        // x = 3 * (a_11 o a_21 o a_31); orthonormal-across-r factors make
        // the gram the identity.
        let cols: Vec<Vec<f64>> = factors.iter().map(|a| a.col(0)).collect();
        let x = DenseTensor::outer_rank1(&cols.iter().map(|v| v.as_slice()).collect::<Vec<_>>())
            .scaled(3.0);
        let c = project_cp(&model, &x).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-10);
        assert!(c[1].abs() < 1e-10 && c[2].abs() < 1e-10);
    }

    #[test]
    fn project_cp_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let dims = [8, 7, 6];
        let samples: Vec<DenseTensor> = (0..20)
            .map(|_| DenseTensor::from_fn(&dims, |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = fit_cp(&samples, 2, 20, 1e-9, 0).unwrap();
        let model = &fit.model;
        let (a, b) = (0.7, -1.3);
        let x1 = &samples[0];
        let x2 = &samples[1];
        // a*x1 + b*x2 + mean*(1 - a - b) centers to a*x1~ + b*x2~.
        let mut combo = x1.scaled(a);
        combo.axpy_in_place(b, x2).unwrap();
        combo
            .axpy_in_place(1.0 - a - b, &model.train_mean)
            .unwrap();
        let lhs = project_cp(model, &combo).unwrap();
        let c1 = project_cp(model, x1).unwrap();
        let c2 = project_cp(model, x2).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * c1[i] + b * c2[i];
            assert!((lhs[i] - rhs).abs() < 1e-9, "coefficient {i}");
        }
    }

    #[test]
    fn embed_superdiag_examples() {
        let t = embed_superdiag(&[1.0], 3);
        assert_eq!(t.shape(), &[1, 1, 1]);
        assert_eq!(t.data(), &[1.0]);

        let t = embed_superdiag(&[2.0, 3.0], 2);
        assert_eq!(t.get(&[0, 0]), 2.0);
        assert_eq!(t.get(&[1, 1]), 3.0);
        assert_eq!(t.get(&[0, 1]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(114);
        let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = embed_superdiag(&c, 3);
        let norm_c = dot(&c, &c).sqrt();
        assert!((t.frobenius_norm() - norm_c).abs() < 1e-14);
        for (i, &v) in c.iter().enumerate() {
            assert_eq!(t.get(&[i, i, i]), v);
        }
    }

    #[test]
    fn rank_above_dimension_is_rejected() {
        let samples = vec![DenseTensor::zeros(&[3, 3]), DenseTensor::zeros(&[3, 3])];
        assert!(matches!(
            fit_tucker(&samples, &[4, 2], 1, 1e-8),
            Err(DecompError::RankExceedsDim { mode: 0, .. })
        ));
    }

    #[test]
    fn loading_alignment_detects_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(115);
        let (samples, truth) = planted_tucker_samples(&mut rng, 30, &[8, 7, 6], &[2, 2, 2]);
        let fit = fit_tucker(&samples, &[2, 2, 2], 30, 1e-9).unwrap();
        let sig = loading_alignment(&fit.model.loadings, &truth).unwrap();
        for (m, s) in sig.iter().enumerate() {
            assert!(*s > 1.0 - 1e-8, "mode {m} alignment {s}");
        }
    }
}
