//! Execution strategy for the data-parallel loops (batch scoring, per-level
//! fits, fold evaluation).
//!
//! With the `parallel` feature (on by default) [`Exec::Parallel`] dispatches to
//! rayon; without it every strategy runs sequentially. Only order-preserving
//! maps are parallelized, so results are bit-identical between strategies.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `0..len`, returning results in index order.
    pub fn map_range<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..len).into_par_iter().map(f).collect(),
            _ => (0..len).map(f).collect(),
        }
    }

    /// Like [`Exec::map_range`] but short-circuits on the first error (by index).
    pub fn try_map_range<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        // Collect everything first so the reported error does not depend on scheduling.
        self.map_range(len, f).into_iter().collect()
    }
}

/// Configures the global rayon pool from a thread cap. No-op without `parallel`.
pub fn init_thread_pool(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads.filter(|&n| n > 0) {
        // Fails only if the pool was already built; keep whatever exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
