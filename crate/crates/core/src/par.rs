//! Order-preserving parallel maps. Results always come back in index order
//! so reductions done afterwards are independent of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Applies `f(i, chunk)` to consecutive `size`-long chunks of `data` and
/// returns the results in chunk order.
#[cfg(feature = "parallel")]
pub fn chunks_mut<T: Send, R: Send>(
    data: &mut [T],
    size: usize,
    f: impl Fn(usize, &mut [T]) -> R + Sync + Send,
) -> Vec<R> {
    data.par_chunks_mut(size)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn chunks_mut<T: Send, R: Send>(
    data: &mut [T],
    size: usize,
    f: impl Fn(usize, &mut [T]) -> R + Sync + Send,
) -> Vec<R> {
    data.chunks_mut(size)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}
