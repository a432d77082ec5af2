//! Thin switch between rayon and sequential iteration over independent items.
//!
//! Every helper preserves item order in its output, so callers that reduce
//! the results sequentially get identical bits for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting in index order.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
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

/// Applies `f` to consecutive mutable chunks of length `chunk`, with the chunk index.
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Fallible variant of [`for_each_chunk_mut`]; returns the first error by chunk index.
pub(crate) fn try_for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F) -> crate::Result<()>
where
    F: Fn(usize, &mut [f64]) -> crate::Result<()> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let results: Vec<crate::Result<()>> = data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
        results.into_iter().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c)?;
        }
        Ok(())
    }
}
