//! Chunked execution over disjoint output slices. With the `parallel` feature
//! the work runs on the rayon pool; without it, the same closures run on one
//! thread. Every cell is produced by exactly one closure invocation with a
//! fixed accumulation order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether conv kernels use the rayon pool by default.
pub fn default_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
pub(crate) fn run_chunks<F>(buf: &mut [f32], chunk: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    if parallel {
        buf.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        for (i, c) in buf.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn run_chunks<F>(buf: &mut [f32], chunk: usize, _parallel: bool, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    for (i, c) in buf.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}
