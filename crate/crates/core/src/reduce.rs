//! Deterministic parallel reductions.
//!
//! Inputs are split into fixed-size chunks; each chunk is folded
//! sequentially, and the per-chunk partials are combined left to right.
//! The chunk boundaries never depend on the thread count, so results are
//! bitwise identical whether the rayon pool has one worker or many.

use rayon::prelude::*;
use std::ops::Add;

/// Number of items folded sequentially per chunk.
pub const CHUNK: usize = 2048;

/// Sums `f(i)` for `i in 0..len` in the fixed chunk order.
pub fn chunked_sum<T, F>(len: usize, zero: T, f: F) -> T
where
    T: Add<Output = T> + Copy + Send + Sync,
    F: Fn(usize) -> T + Sync,
{
    let n_chunks = len.div_ceil(CHUNK);
    let partials: Vec<T> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(len);
            (start..end).fold(zero, |acc, i| acc + f(i))
        })
        .collect();
    partials.into_iter().fold(zero, |acc, p| acc + p)
}

/// Generalized chunked fold for accumulators that are not `Copy`.
pub fn chunked_fold<A, F, M>(len: usize, init: impl Fn() -> A + Sync, fold: F, merge: M) -> A
where
    A: Send,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, A),
{
    let n_chunks = len.div_ceil(CHUNK);
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(len);
            let mut acc = init();
            for i in start..end {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}
