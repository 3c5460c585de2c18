//! Execution policy for the data-parallel kernels.
//!
//! Parallel work is always split so that each output element is produced by
//! exactly one task with the same loop order as the sequential path. Results
//! are therefore bit-identical under either policy and any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many scalar multiply-adds a kernel stays on the calling thread.
pub const PARALLEL_MIN_WORK: usize = 1 << 14;

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
    /// Picks sequential execution for small workloads.
    pub fn for_work(self, work: usize) -> Exec {
        if work < PARALLEL_MIN_WORK {
            Exec::Sequential
        } else {
            self
        }
    }

    /// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out`.
    pub fn rows<F>(self, out: &mut [f32], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => out
                .par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
            _ => out
                .chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }
}
