//! Data-parallel primitives with a sequential fallback.
//!
//! With the default `parallel` feature the helpers dispatch to rayon; without
//! it they run the same code sequentially. Reductions use a fixed chunk size
//! so that floating-point results are byte-identical regardless of the
//! feature flag or the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction chunk; also the minimum slice length worth parallelising.
pub const CHUNK: usize = 4096;

fn sum_chunk(c: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in c {
        acc += v;
    }
    acc
}

fn dot_chunk(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Deterministic chunked sum, sequential.
pub fn sum_seq(values: &[f64]) -> f64 {
    values.chunks(CHUNK).map(sum_chunk).sum()
}

/// Deterministic chunked sum.
#[cfg(feature = "parallel")]
pub fn sum(values: &[f64]) -> f64 {
    if values.len() < 2 * CHUNK {
        return sum_seq(values);
    }
    let partials: Vec<f64> = values.par_chunks(CHUNK).map(sum_chunk).collect();
    partials.iter().sum()
}

/// Deterministic chunked sum.
#[cfg(not(feature = "parallel"))]
pub fn sum(values: &[f64]) -> f64 {
    sum_seq(values)
}

/// Deterministic chunked dot product, sequential.
pub fn dot_seq(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.chunks(CHUNK)
        .zip(b.chunks(CHUNK))
        .map(|(ca, cb)| dot_chunk(ca, cb))
        .sum()
}

/// Deterministic chunked dot product.
#[cfg(feature = "parallel")]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 * CHUNK {
        return dot_seq(a, b);
    }
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| dot_chunk(ca, cb))
        .collect();
    partials.iter().sum()
}

/// Deterministic chunked dot product.
#[cfg(not(feature = "parallel"))]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot_seq(a, b)
}

/// Order-preserving indexed map used to fill large value tables, sequential.
pub fn tabulate_seq<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync,
{
    (0..n).map(f).collect()
}

/// Order-preserving indexed map used to fill large value tables.
#[cfg(feature = "parallel")]
pub fn tabulate<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n < 2 * CHUNK {
        return tabulate_seq(n, f);
    }
    (0..n).into_par_iter().map(f).collect()
}

/// Order-preserving indexed map used to fill large value tables.
#[cfg(not(feature = "parallel"))]
pub fn tabulate<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync,
{
    tabulate_seq(n, f)
}

/// Order-preserving map over a batch of independent work items, sequential.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over a batch of independent work items (fans,
/// multi-starts, grid cells). Output order equals input order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Order-preserving map over a batch of independent work items.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_collect_seq(items, f)
}
