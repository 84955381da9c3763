//! Replicate-parallel map.
//!
//! With the `parallel` feature the map runs on the rayon pool; without it,
//! in a plain loop. Output order is replicate order in both cases.

/// Evaluates `f(r)` for `r = 0..count`, in parallel when enabled.
pub fn map_replicates<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_replicates_sequential(count, f)
    }
}

/// Single-threaded reference for [`map_replicates`].
pub fn map_replicates_sequential<T, F>(count: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..count).map(f).collect()
}

/// Whether this build runs replicates on a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
