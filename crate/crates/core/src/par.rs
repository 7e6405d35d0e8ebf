//! Data-parallel helpers with a fixed reduction order.
//!
//! Every float reduction in the crate goes through [`sum_f64`] / [`sum_c64`]:
//! values are first materialised in index order (possibly in parallel), then
//! folded by a pairwise tree whose shape depends only on the length. Results
//! are therefore bit-identical with or without the `parallel` feature and
//! independent of the rayon thread count.

use num_complex::Complex64;

/// Below this many items the parallel path is not worth the scheduling cost.
pub const PAR_THRESHOLD: usize = 256;

/// `(0..len).map(f).collect()`, in parallel when the `parallel` feature is on.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= PAR_THRESHOLD {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Like [`map_indexed`] but always parallel (when enabled) regardless of length.
/// Use when each item is itself expensive.
pub fn map_indexed_coarse<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len > 1 {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Applies `f` to disjoint mutable chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() >= PAR_THRESHOLD {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Pairwise (tree) summation in index order.
pub fn sum_f64(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n if n <= 8 => {
            let mut acc = values[0];
            for v in &values[1..] {
                acc += v;
            }
            acc
        }
        n => {
            let mid = n / 2;
            sum_f64(&values[..mid]) + sum_f64(&values[mid..])
        }
    }
}

pub fn sum_c64(values: &[Complex64]) -> Complex64 {
    match values.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => values[0],
        n if n <= 8 => {
            let mut acc = values[0];
            for v in &values[1..] {
                acc += v;
            }
            acc
        }
        n => {
            let mid = n / 2;
            sum_c64(&values[..mid]) + sum_c64(&values[mid..])
        }
    }
}

pub fn mean_f64(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        sum_f64(values) / values.len() as f64
    }
}

pub fn mean_c64(values: &[Complex64]) -> Complex64 {
    if values.is_empty() {
        Complex64::new(0.0, 0.0)
    } else {
        sum_c64(values) / values.len() as f64
    }
}

/// Parallel map followed by the deterministic tree sum.
pub fn sum_indexed_f64<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum_f64(&map_indexed(len, f))
}

pub fn sum_indexed_c64<F>(len: usize, f: F) -> Complex64
where
    F: Fn(usize) -> Complex64 + Sync + Send,
{
    sum_c64(&map_indexed(len, f))
}

/// Integer reductions commute exactly, so any order is fine.
pub fn sum_indexed_u64<F>(len: usize, f: F) -> u64
where
    F: Fn(usize) -> u64 + Sync + Send,
{
    map_indexed(len, f).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(sum_f64(&v), 499500.0);
        assert_eq!(sum_f64(&[]), 0.0);
    }

    #[test]
    fn map_indexed_keeps_order() {
        let v = map_indexed(5000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
