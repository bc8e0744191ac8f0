//! Deterministic data-parallel helpers.
//!
//! All hot loops in the crate run through these wrappers. With the
//! `parallel` feature (default) they fan out over rayon; without it they
//! degrade to plain sequential loops. Work is always split along *fixed*
//! boundaries (chunk index, unit index) and reductions combine partial
//! results in index order, so numeric output does not depend on the thread
//! count or on work-stealing order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f(chunk_index, chunk)` over fixed-size mutable chunks.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Maps `f` over `0..n` and collects results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `f(unit_index)` for every unit, for side-effect-free-per-unit work
/// that writes through raw pointers or interior chunking is NOT allowed
/// here; use [`for_each_chunk_mut`] for mutation.
pub fn for_each_index<F>(n: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).for_each(f);
    }
}

/// Fixed chunk length used by the deterministic reductions.
pub const SUM_CHUNK: usize = 4096;

/// Sums `f(chunk_index, chunk)` partials in chunk order.
///
/// The per-chunk partial is computed sequentially inside the chunk; partials
/// are combined left-to-right, so the result is identical for any thread
/// count.
pub fn sum_chunks<T, F>(data: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(usize, &[T]) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = data
        .par_chunks(SUM_CHUNK)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = data.chunks(SUM_CHUNK).enumerate().map(|(i, c)| f(i, c)).collect();
    partials.iter().sum()
}

/// Deterministic sum of an f32 slice in f64.
pub fn sum_f32(data: &[f32]) -> f64 {
    sum_chunks(data, |_, c| c.iter().map(|&v| v as f64).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential() {
        let v: Vec<f32> = (0..20_000).map(|i| (i as f32).sin()).collect();
        let seq: f64 = v
            .chunks(SUM_CHUNK)
            .map(|c| c.iter().map(|&x| x as f64).sum::<f64>())
            .sum();
        assert_eq!(sum_f32(&v), seq);
    }

    #[test]
    fn chunk_indices_cover_all() {
        let mut v = vec![0u32; 1000];
        for_each_chunk_mut(&mut v, 7, |i, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = (i * 7 + j) as u32;
            }
        });
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, i as u32);
        }
    }
}
