//! Dense N-mode tensor algebra.
//!
//! Tensors are stored as a flat `f64` buffer with a last-mode-fastest
//! linearization (the row-major generalization): for shape
//! `(D_1, ..., D_M)` the entry at `(i_1, ..., i_M)` lives at
//! `((i_1 * D_2 + i_2) * D_3 + ...) + i_M`. The mode-m unfolding orders
//! its columns by the remaining modes in increasing mode order under the
//! same convention, so `fold(unfold(t, m), m, shape) == t` exactly.
//!
//! All arithmetic is in `f64`. Values are immutable after construction
//! as far as the public operations are concerned; every operation here
//! is a pure function and safe to call from multiple threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from shape-checked tensor operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("mode {mode} out of range for {ndim}-mode tensor")]
    ModeOutOfRange { mode: usize, ndim: usize },
    #[error("dimension mismatch: {context}")]
    DimMismatch { context: String },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

fn dim_mismatch(context: impl Into<String>) -> TensorError {
    TensorError::DimMismatch {
        context: context.into(),
    }
}

// ---------------------------------------------------------------------------
// DenseTensor
// ---------------------------------------------------------------------------

/// Dense N-mode tensor with last-mode-fastest layout.
///
/// Invariants: `data.len() == shape.iter().product()` and every shape
/// entry is >= 1. A zero-mode tensor (empty shape) is a scalar with one
/// entry; it arises as the result of a full contraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&d| d >= 1), "shape entries must be >= 1");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Build from a flat buffer in the declared layout.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(shape.iter().all(|&d| d >= 1), "shape entries must be >= 1");
        let len: usize = shape.iter().product();
        assert_eq!(data.len(), len, "data length must equal product of shape");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Tensor with every entry drawn from `f(multi_index)`.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for lin in 0..t.data.len() {
            t.decode_index(lin, &mut idx);
            t.data[lin] = f(&idx);
        }
        t
    }

    /// Scalar (zero-mode) tensor.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a multi-index under the layout convention.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut lin = 0usize;
        for (m, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[m]);
            lin = lin * self.shape[m] + i;
        }
        lin
    }

    fn decode_index(&self, mut lin: usize, out: &mut [usize]) {
        for m in (0..self.shape.len()).rev() {
            out[m] = lin % self.shape[m];
            lin /= self.shape[m];
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    /// Reinterpret the same buffer under a new shape with equal length.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(Self::from_vec(shape, self.data.clone()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut t = self.clone();
        t.scale_in_place(s);
        t
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_vec(&self.shape, data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_vec(&self.shape, data))
    }

    /// `self += s * other`.
    pub fn axpy_in_place(&mut self, s: f64, other: &Self) -> Result<(), TensorError> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Flat inner product `<vec(self), vec(other)>`.
    pub fn dot(&self, other: &Self) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Elementwise mean of a nonempty slice of same-shape tensors.
    pub fn mean_of(tensors: &[Self]) -> Result<Self, TensorError> {
        let first = tensors
            .first()
            .ok_or_else(|| dim_mismatch("mean of empty tensor set"))?;
        let mut acc = Self::zeros(&first.shape);
        for t in tensors {
            acc.axpy_in_place(1.0, t)?;
        }
        acc.scale_in_place(1.0 / tensors.len() as f64);
        Ok(acc)
    }

    // -----------------------------------------------------------------------
    // Unfolding / folding
    // -----------------------------------------------------------------------

    /// Mode-m matricization: `shape[mode]` rows, product of the remaining
    /// dimensions columns, columns ordered by the remaining modes in
    /// increasing mode order (last fastest).
    pub fn unfold(&self, mode: usize) -> Result<Matrix, TensorError> {
        if mode >= self.ndim() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                ndim: self.ndim(),
            });
        }
        let dm = self.shape[mode];
        let outer: usize = self.shape[..mode].iter().product();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let cols = outer * inner;
        let mut m = Matrix::zeros(dm, cols);
        for o in 0..outer {
            for r in 0..dm {
                let src = (o * dm + r) * inner;
                let dst = r * cols + o * inner;
                m.data[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Ok(m)
    }

    /// Inverse of [`unfold`](Self::unfold) for the given target shape.
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Self, TensorError> {
        if mode >= shape.len() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                ndim: shape.len(),
            });
        }
        let dm = shape[mode];
        let outer: usize = shape[..mode].iter().product();
        let inner: usize = shape[mode + 1..].iter().product();
        if m.rows != dm || m.cols != outer * inner {
            return Err(dim_mismatch(format!(
                "fold: matrix {}x{} does not match shape {:?} on mode {}",
                m.rows, m.cols, shape, mode
            )));
        }
        let mut t = Self::zeros(shape);
        let cols = m.cols;
        for o in 0..outer {
            for r in 0..dm {
                let dst = (o * dm + r) * inner;
                let src = r * cols + o * inner;
                t.data[dst..dst + inner].copy_from_slice(&m.data[src..src + inner]);
            }
        }
        Ok(t)
    }

    // -----------------------------------------------------------------------
    // Mode product and contraction
    // -----------------------------------------------------------------------

    /// Mode-m product with a matrix: replaces `shape[mode]` by `a.rows`.
    ///
    /// Equals `fold(a * unfold(self, mode), mode, new_shape)`.
    pub fn mode_product(&self, a: &Matrix, mode: usize) -> Result<Self, TensorError> {
        if mode >= self.ndim() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                ndim: self.ndim(),
            });
        }
        if a.cols != self.shape[mode] {
            return Err(dim_mismatch(format!(
                "mode_product: matrix has {} columns, mode {} has dimension {}",
                a.cols, mode, self.shape[mode]
            )));
        }
        let unfolded = self.unfold(mode)?;
        let product = a.matmul(&unfolded);
        let mut new_shape = self.shape.clone();
        new_shape[mode] = a.rows;
        Self::fold(&product, mode, &new_shape)
    }

    /// Contraction of the trailing `n_in_modes` modes of `self` against
    /// `other`: the result keeps the leading modes, and each entry is the
    /// full inner product of the matching trailing block with `other`.
    pub fn contract(&self, other: &Self, n_in_modes: usize) -> Result<Self, TensorError> {
        if n_in_modes > self.ndim() {
            return Err(dim_mismatch(format!(
                "contract: {} in-modes requested on a {}-mode tensor",
                n_in_modes,
                self.ndim()
            )));
        }
        let split = self.ndim() - n_in_modes;
        if self.shape[split..] != *other.shape() {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape[split..].to_vec(),
                got: other.shape.clone(),
            });
        }
        let out_shape = self.shape[..split].to_vec();
        let in_len = other.data.len();
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![0.0; out_len];
        for (p, slot) in out.iter_mut().enumerate() {
            *slot = dot(&self.data[p * in_len..(p + 1) * in_len], &other.data);
        }
        Ok(Self::from_vec(&out_shape, out))
    }

    /// Rank-1 tensor from an outer product of vectors: entry
    /// `(i_1, ..., i_M)` equals the product of `vectors[m][i_m]`.
    pub fn outer_rank1(vectors: &[&[f64]]) -> Self {
        assert!(!vectors.is_empty(), "outer_rank1 needs at least one vector");
        assert!(
            vectors.iter().all(|v| !v.is_empty()),
            "outer_rank1 vectors must be nonempty"
        );
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        let mut data = vectors[0].to_vec();
        for v in &vectors[1..] {
            let mut next = Vec::with_capacity(data.len() * v.len());
            for &a in &data {
                for &b in *v {
                    next.push(a * b);
                }
            }
            data = next;
        }
        Self::from_vec(&shape, data)
    }
}

/// Flat dot product; the single accumulation order used everywhere.
///
/// Four fixed accumulator lanes break the sequential add dependency so
/// the loop pipelines; the lane layout is part of the deterministic
/// accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix; houses loadings, unfoldings, and the small
/// symmetric systems solved during fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.set(r, c, x);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        for x in &mut m.data {
            *x *= s;
        }
        m
    }

    /// `self += s * other` (shapes must match).
    pub fn axpy_in_place(&mut self, s: f64, other: &Self) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// First `ncols` columns.
    pub fn truncate_cols(&self, ncols: usize) -> Self {
        assert!(ncols <= self.cols);
        let mut out = Self::zeros(self.rows, ncols);
        for r in 0..self.rows {
            out.data[r * ncols..(r + 1) * ncols]
                .copy_from_slice(&self.data[r * self.cols..r * self.cols + ncols]);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::from_vec(shape, data)
    }

    #[test]
    fn unfold_two_mode_is_identity() {
        let t = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let m = t.unfold(0).unwrap();
        assert_eq!(m.rows, 2);
        assert_eq!(m.cols, 2);
        assert_eq!(m.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unfold_mode0_of_counting_cube() {
        // t[i,j,k] = 4i + 2j + k + 1, i.e. entries 1..=8 in layout order.
        let t = DenseTensor::from_fn(&[2, 2, 2], |idx| {
            (4 * idx[0] + 2 * idx[1] + idx[2] + 1) as f64
        });
        let m = t.unfold(0).unwrap();
        assert_eq!((m.rows, m.cols), (2, 4));
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.row(1), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn unfold_matches_index_enumeration() {
        // Independent oracle: place each entry by explicit multi-index
        // arithmetic and compare with the strided implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = [3, 4, 2, 5];
        let t = random_tensor(&mut rng, &shape);
        for mode in 0..shape.len() {
            let m = t.unfold(mode).unwrap();
            let mut idx = [0usize; 4];
            for lin in 0..t.len() {
                let mut rem = lin;
                for k in (0..4).rev() {
                    idx[k] = rem % shape[k];
                    rem /= shape[k];
                }
                let mut col = 0usize;
                for k in 0..4 {
                    if k != mode {
                        col = col * shape[k] + idx[k];
                    }
                }
                assert_eq!(m.get(idx[mode], col), t.data()[lin]);
            }
        }
    }

    #[test]
    fn fold_unfold_round_trip_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let ndim = rng.gen_range(1..=4);
            let shape: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=6)).collect();
            let t = random_tensor(&mut rng, &shape);
            for mode in 0..ndim {
                let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, &shape).unwrap();
                assert_eq!(back, t, "round trip failed on shape {shape:?} mode {mode}");
            }
        }
    }

    #[test]
    fn unfold_rejects_out_of_range_mode() {
        let t = DenseTensor::zeros(&[2, 3]);
        assert!(matches!(
            t.unfold(2),
            Err(TensorError::ModeOutOfRange { mode: 2, ndim: 2 })
        ));
    }

    #[test]
    fn mode_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, &[3, 4, 2]);
        for mode in 0..3 {
            let eye = Matrix::identity(t.shape()[mode]);
            let p = t.mode_product(&eye, mode).unwrap();
            assert_eq!(p, t);
        }
    }

    #[test]
    fn mode_product_sums_mode0_fibers() {
        let t = DenseTensor::from_vec(&[2, 2, 2], vec![1.0; 8]);
        let a = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        let p = t.mode_product(&a, 0).unwrap();
        assert_eq!(p.shape(), &[1, 2, 2]);
        assert!(p.data().iter().all(|&x| (x - 2.0).abs() < 1e-15));
    }

    #[test]
    fn mode_product_rejects_dimension_mismatch() {
        let t = DenseTensor::zeros(&[2, 3]);
        let a = Matrix::zeros(2, 4);
        assert!(t.mode_product(&a, 0).is_err());
    }

    #[test]
    fn mode_products_commute_across_distinct_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = random_tensor(&mut rng, &[3, 4, 5]);
            let a = Matrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
            let b = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
            let ab = t.mode_product(&a, 0).unwrap().mode_product(&b, 1).unwrap();
            let ba = t.mode_product(&b, 1).unwrap().mode_product(&a, 0).unwrap();
            let diff = ab.sub(&ba).unwrap();
            let max_abs = diff.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(max_abs <= 1e-12, "commutation violated: {max_abs}");
        }
    }

    #[test]
    fn contract_full_is_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_tensor(&mut rng, &[2, 3, 2]);
        let mut w_shape = vec![1];
        w_shape.extend_from_slice(h.shape());
        let w = random_tensor(&mut rng, &w_shape);
        let out = w.contract(&h, 3).unwrap();
        assert_eq!(out.shape(), &[1]);
        let expect = dot(&w.data(), h.data());
        assert!((out.data()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn contract_matrix_vector_case() {
        let w = DenseTensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = DenseTensor::from_vec(&[3], vec![1.0, 0.0, -1.0]);
        let out = w.contract(&h, 1).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn contract_matches_flattened_matvec() {
        // Brute-force oracle over all index pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let h = random_tensor(&mut rng, &[3, 3]);
        let out = w.contract(&h, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        for p in 0..2 {
            for q in 0..2 {
                let mut expect = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        expect += w.get(&[p, q, i, j]) * h.get(&[i, j]);
                    }
                }
                assert!((out.get(&[p, q]) - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn contract_with_kronecker_delta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = random_tensor(&mut rng, &[3, 2]);
        let w = DenseTensor::from_fn(&[3, 2, 3, 2], |idx| {
            if idx[0] == idx[2] && idx[1] == idx[3] {
                1.0
            } else {
                0.0
            }
        });
        let out = w.contract(&h, 2).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn contract_rejects_shape_mismatch() {
        let w = DenseTensor::zeros(&[2, 3]);
        let h = DenseTensor::zeros(&[4]);
        assert!(matches!(
            w.contract(&h, 1),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn frobenius_norm_basics() {
        assert_eq!(DenseTensor::zeros(&[3, 3]).frobenius_norm(), 0.0);
        let eye = DenseTensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((eye.frobenius_norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_norm_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = random_tensor(&mut rng, &[4, 3, 2]);
        let mut s = 0.0;
        for &x in t.data() {
            s += x * x;
        }
        assert!((t.frobenius_norm() - s.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn outer_rank1_examples() {
        let t = DenseTensor::outer_rank1(&[&[1.0], &[1.0], &[1.0]]);
        assert_eq!(t.shape(), &[1, 1, 1]);
        assert_eq!(t.data(), &[1.0]);

        let t = DenseTensor::outer_rank1(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(t.get(&[0, 1]), 1.0);
        assert_eq!(t.data().iter().filter(|&&x| x != 0.0).count(), 1);

        let t = DenseTensor::outer_rank1(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(t.get(&[1, 1, 1]), 48.0);
        assert_eq!(t.get(&[0, 0, 0]), 15.0);
    }

    #[test]
    fn matrix_matmul_and_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        let at = a.transpose();
        assert_eq!(at.rows, 3);
        assert_eq!(at.col(0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_contract_result() {
        let w = DenseTensor::from_vec(&[2], vec![3.0, 4.0]);
        let h = DenseTensor::from_vec(&[2], vec![1.0, 2.0]);
        let out = w.contract(&h, 1).unwrap();
        assert_eq!(out.ndim(), 0);
        assert_eq!(out.data(), &[11.0]);
    }
}
