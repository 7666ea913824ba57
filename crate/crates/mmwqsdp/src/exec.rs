//! Worker-pool plumbing shared by the Monte-Carlo estimators.
//!
//! With the `parallel` feature (default) repetitions fan out over rayon;
//! without it the same helpers run sequentially. Reductions are always
//! performed in index order over fixed-size chunks so that floating-point
//! sums are bit-identical across thread counts and across both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic partial sums.
pub(crate) const CHUNK: usize = 4096;

/// Cap the global worker pool from `MMWQSDP_THREADS`. A no-op when the
/// variable is unset, unparseable, or the pool is already initialized.
/// Without the `parallel` feature there is no pool to configure.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(value) = std::env::var("MMWQSDP_THREADS") {
            if let Ok(threads) = value.trim().parse::<usize>() {
                if threads >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build_global();
                }
            }
        }
    }
}

/// Whether this build dispatches work onto a rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Map `f` over `0..n`, returning results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Deterministic chunked reduction: each chunk is folded sequentially by
/// `fold`, chunk results are combined left to right by `join`.
pub(crate) fn reduce_chunked<A, F, J>(n: usize, identity: A, fold: F, join: J) -> A
where
    A: Send + Sync + Clone,
    F: Fn(A, usize) -> A + Sync + Send,
    J: Fn(A, A) -> A,
{
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n)))
        .collect();
    let partials: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            chunks
                .into_par_iter()
                .map(|(lo, hi)| (lo..hi).fold(identity.clone(), &fold))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            chunks
                .into_iter()
                .map(|(lo, hi)| (lo..hi).fold(identity.clone(), &fold))
                .collect()
        }
    };
    partials.into_iter().fold(identity, join)
}
