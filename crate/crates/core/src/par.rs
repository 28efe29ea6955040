//! Batched execution helpers.
//!
//! With the `parallel` feature (default) these fan per-sample work out
//! over rayon; without it they are plain loops. Both paths collect in
//! input order and never reduce floats across threads, so results are
//! bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map a pure function over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map a pure function over a slice, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map a pure function over indices `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn batch_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map a pure function over indices `0..n`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn batch_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Apply `f` to each fixed-size row of a flat buffer. Each row is owned
/// by exactly one invocation, so any per-row accumulation order is the
/// same as in the sequential fallback.
#[cfg(feature = "parallel")]
pub fn for_each_row_mut<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    buf.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(k, row)| f(k, row));
}

/// Apply `f` to each fixed-size row of a flat buffer.
#[cfg(not(feature = "parallel"))]
pub fn for_each_row_mut<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    for (k, row) in buf.chunks_mut(row_len).enumerate() {
        f(k, row);
    }
}
