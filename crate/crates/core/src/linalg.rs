//! Small dense linear algebra used by the fitting routines.
//!
//! Everything here targets symmetric or square systems of dimension at
//! most a few dozen (mode covariances are D_m x D_m with D_m <= 32, CP
//! grams are R x R). Deterministic, dependency-free implementations:
//! cyclic Jacobi for symmetric eigenproblems, Cholesky and
//! partial-pivot LU for solves, Householder QR for orthonormalization.

use crate::tensor::{dot, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular or not positive definite at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("jacobi eigensolver failed to converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted descending; `vectors` holds the matching
/// orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(a: &Matrix) -> Result<SymEig, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let max_sweeps = 100;

    for _sweep in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + m.frobenius_norm()) {
            return Ok(sort_eig(m, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(LinalgError::NoConvergence { sweeps: max_sweeps })
}

fn sort_eig(m: Matrix, v: Matrix) -> SymEig {
    let n = m.rows;
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = v.col(i);
        fix_column_sign(&mut col);
        vectors.set_col(c, &col);
    }
    SymEig { values, vectors }
}

/// Sign of the largest-magnitude entry (+1.0 when it is nonnegative).
pub fn dominant_sign(col: &[f64]) -> f64 {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if col.is_empty() || col[best] >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Flip a vector so its largest-magnitude entry is positive.
///
/// Sign convention for loadings and factors so repeated fits of the same
/// data produce identical artifacts.
pub fn fix_column_sign(col: &mut [f64]) {
    if dominant_sign(col) < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}

/// Cholesky solve of a symmetric positive-definite system `a x = b`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let l = cholesky(a)?;
    let n = a.rows;
    // Forward substitution L y = b.
    let mut y = b.to_vec();
    for i in 0..n {
        let s = dot(&l.data[i * n..i * n + i], &y[..i]);
        y[i] = (y[i] - s) / l.get(i, i);
    }
    // Back substitution L^T x = y.
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(LinalgError::Singular { pivot: i });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Partial-pivot LU solve of a general square system `a x = b`.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    assert_eq!(b.len(), n);
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut piv = k;
        let mut piv_abs = lu.get(k, k).abs();
        for r in (k + 1)..n {
            let v = lu.get(r, k).abs();
            if v > piv_abs {
                piv = r;
                piv_abs = v;
            }
        }
        if piv_abs < 1e-300 {
            return Err(LinalgError::Singular { pivot: k });
        }
        if piv != k {
            for c in 0..n {
                let tmp = lu.get(k, c);
                lu.set(k, c, lu.get(piv, c));
                lu.set(piv, c, tmp);
            }
            perm.swap(k, piv);
            x.swap(k, piv);
        }
        for r in (k + 1)..n {
            let f = lu.get(r, k) / lu.get(k, k);
            lu.set(r, k, f);
            for c in (k + 1)..n {
                let v = lu.get(r, c) - f * lu.get(k, c);
                lu.set(r, c, v);
            }
            x[r] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for c in (i + 1)..n {
            s -= lu.get(i, c) * x[c];
        }
        x[i] = s / lu.get(i, i);
    }
    Ok(x)
}

/// Thin Householder QR: returns Q with orthonormal columns
/// (`a.rows x min(rows, cols)`), signs fixed so the R diagonal is
/// nonnegative.
pub fn qr_thin_q(a: &Matrix) -> Matrix {
    let m = a.rows;
    let n = a.cols.min(a.rows);
    let mut r = a.clone();
    // Householder vectors stored per reflection.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<f64> = (k..m).map(|i| r.get(i, k)).collect();
        let alpha = -v[0].signum() * dot(&v, &v).sqrt();
        if alpha == 0.0 {
            // Zero column below the diagonal; use a unit reflector to keep
            // Q well-defined.
            v[0] = 1.0;
            let norm = 1.0;
            vs.push(v.iter().map(|x| x / norm).collect());
            continue;
        }
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // Apply the reflector to the remaining columns of R.
        for c in k..r.cols {
            let mut proj = 0.0;
            for (i, vi) in v.iter().enumerate() {
                proj += vi * r.get(k + i, c);
            }
            for (i, vi) in v.iter().enumerate() {
                let val = r.get(k + i, c) - 2.0 * proj * vi;
                r.set(k + i, c, val);
            }
        }
        vs.push(v);
    }
    // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n columns
    // of the identity.
    let mut q = Matrix::zeros(m, n);
    for c in 0..n {
        q.set(c, c, 1.0);
    }
    for k in (0..vs.len()).rev() {
        let v = &vs[k];
        for c in 0..n {
            let mut proj = 0.0;
            for (i, vi) in v.iter().enumerate() {
                proj += vi * q.get(k + i, c);
            }
            for (i, vi) in v.iter().enumerate() {
                let val = q.get(k + i, c) - 2.0 * proj * vi;
                q.set(k + i, c, val);
            }
        }
    }
    // Fix signs so the implied R diagonal is nonnegative.
    for c in 0..n {
        let mut diag = 0.0;
        for i in 0..m {
            diag += q.get(i, c) * a.get(i, c);
        }
        if diag < 0.0 {
            for i in 0..m {
                let val = -q.get(i, c);
                q.set(i, c, val);
            }
        }
    }
    q
}

/// Largest singular value via power iteration on `a^T a`.
pub fn spectral_norm(a: &Matrix, iters: usize) -> f64 {
    let n = a.cols;
    if n == 0 || a.rows == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    normalize(&mut v);
    let at = a.transpose();
    let mut sigma2 = 0.0;
    for _ in 0..iters {
        let av = a.matvec(&v);
        let mut atav = at.matvec(&av);
        sigma2 = dot(&atav, &v);
        let nrm = dot(&atav, &atav).sqrt();
        if nrm < 1e-300 {
            return 0.0;
        }
        for x in atav.iter_mut() {
            *x /= nrm;
        }
        v = atav;
    }
    sigma2.max(0.0).sqrt()
}

/// All singular values of a small matrix, descending, via the
/// eigenvalues of the smaller Gram matrix.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    let gram = if a.rows <= a.cols {
        let at = a.transpose();
        a.matmul(&at)
    } else {
        let at = a.transpose();
        at.matmul(a)
    };
    let eig = sym_eig(&gram)?;
    Ok(eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect())
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal-column matrices.
///
/// Computed through the orthogonal-complement residual so that angles
/// near zero are resolved to machine precision: sin(theta_i) are the
/// singular values of `(I - Q2 Q2^T) Q1`.
pub fn principal_angles(q1: &Matrix, q2: &Matrix) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(q1.rows, q2.rows, "subspaces must share ambient dimension");
    // R = Q1 - Q2 (Q2^T Q1)
    let q2t_q1 = q2.transpose().matmul(q1);
    let mut r = q1.clone();
    let proj = q2.matmul(&q2t_q1);
    r.axpy_in_place(-1.0, &proj);
    let mut sines = singular_values(&r)?;
    sines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sines
        .iter()
        .take(q1.cols)
        .map(|&s| s.clamp(0.0, 1.0).asin())
        .collect())
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}
