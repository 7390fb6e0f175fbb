//! Deterministic data-parallel helpers.
//!
//! Every reduction here is chunked with a fixed chunk size and combined in
//! chunk order, so the floating-point result is bit-identical whether the
//! chunk map runs on rayon (feature `parallel`, default) or sequentially, and
//! identical for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per chunk. Fixed: changing it changes summation order and therefore
/// the low bits of reductions.
pub const CHUNK: usize = 1024;

#[inline]
fn chunk_ranges(n_items: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_items.div_ceil(CHUNK)).map(move |c| (c * CHUNK, ((c + 1) * CHUNK).min(n_items)))
}

/// Σ_{i<n} f(i), summed left to right within chunks, chunks combined in order.
pub fn sum_over<F>(n_items: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk_sum = |(lo, hi): (usize, usize)| (lo..hi).map(&f).sum::<f64>();
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = chunk_ranges(n_items).collect::<Vec<_>>().into_par_iter().map(chunk_sum).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = chunk_ranges(n_items).map(chunk_sum).collect();
    partials.iter().sum()
}

/// Dense-vector accumulation: returns Σ_{i<n} contribution(i), where each call
/// adds item i's contribution into a zeroed chunk-local accumulator of length
/// `out_len`. Chunk accumulators are added entrywise in chunk order.
pub fn vec_sum_over<F>(n_items: usize, out_len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunk_acc = |(lo, hi): (usize, usize)| {
        let mut acc = vec![0.0; out_len];
        for i in lo..hi {
            f(i, &mut acc);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> =
        chunk_ranges(n_items).collect::<Vec<_>>().into_par_iter().map(chunk_acc).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = chunk_ranges(n_items).map(chunk_acc).collect();
    let mut out = vec![0.0; out_len];
    for p in partials {
        for (o, x) in out.iter_mut().zip(&p) {
            *o += x;
        }
    }
    out
}

/// Fills `out`, split into disjoint consecutive blocks of `block` elements,
/// one block per item: f(i, block_i). No reduction, so order is irrelevant;
/// chunking only bounds task granularity.
pub fn fill_blocks<F>(out: &mut [f64], block: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert_eq!(out.len() % block.max(1), 0);
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(block).with_min_len(CHUNK).enumerate().for_each(|(i, b)| f(i, b));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(block).enumerate().for_each(|(i, b)| f(i, b));
}
