//! Sequential / parallel execution switch.
//!
//! Every data-parallel loop in the crate goes through [`Execution`], so the
//! same call site can run on the rayon pool or on the calling thread. Results
//! never depend on the chosen mode: parallel maps preserve input order and
//! parallel reductions only combine integer counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is on, otherwise identical to
    /// [`Execution::Sequential`].
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n` and sums the results.
    pub fn sum_range<F>(self, n: u64, f: F) -> u64
    where
        F: Fn(u64) -> u64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).sum();
        }
        (0..n).map(f).sum()
    }

    /// Order-preserving map with at most `bound` items in flight.
    pub fn map_bounded<T, R, F>(self, items: &[T], bound: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && bound > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(bound).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => return items.iter().map(f).collect(),
            }
        }
        let _ = bound;
        items.iter().map(f).collect()
    }
}
