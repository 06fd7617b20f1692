//! Row-level parallelism with a sequential fallback.
//!
//! Every hot loop in the engine writes independent output rows, each row
//! accumulated in a fixed order, so results are identical whether rayon or
//! the sequential path runs them. Build with `--no-default-features` to drop
//! the rayon dependency entirely.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this output size the fork/join overhead outweighs the work even
/// on wide machines, so small matrices stay on one thread.
const MIN_PARALLEL_ELEMS: usize = 1 << 16;

/// Applies `f(row_index, row)` to every `cols`-wide chunk of `data`.
pub fn for_each_row_mut<F>(data: &mut [f32], cols: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    debug_assert!(cols > 0 && data.len().is_multiple_of(cols));
    #[cfg(feature = "parallel")]
    if data.len() >= MIN_PARALLEL_ELEMS {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Fills a vector where slot `i` is `f(i)`.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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
