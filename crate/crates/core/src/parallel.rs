//! Ordered map over trajectory indices, data-parallel when the `parallel`
//! feature is on.

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// `threads = None` uses the global rayon pool.
    #[default]
    Parallel,
    ParallelWith { threads: usize },
}

impl Execution {
    pub fn from_threads(threads: Option<usize>) -> Self {
        match threads {
            Some(1) => Execution::Sequential,
            Some(n) if n > 1 => Execution::ParallelWith { threads: n },
            _ => Execution::Parallel,
        }
    }
}

/// Evaluates `f(0..n)` and returns results in index order. The first error
/// (by index) wins, so outcomes do not depend on scheduling.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            ordered((0..n).into_par_iter().map(f).collect())
        }
        #[cfg(feature = "parallel")]
        Execution::ParallelWith { threads } => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            ordered(pool.install(|| (0..n).into_par_iter().map(f).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::ParallelWith { .. } => {
            (0..n).map(f).collect()
        }
    }
}

#[cfg(feature = "parallel")]
fn ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}
