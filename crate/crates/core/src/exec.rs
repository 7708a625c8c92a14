//! Execution strategy for the data-parallel inner loops.
//!
//! Every fan-out in the crate (grid evaluation, structural-form term sums,
//! sweeps) goes through [`map_range`], which preserves index order in its
//! output regardless of strategy. Reductions over the mapped values run
//! sequentially afterwards, so both modes produce identical numbers.
//!
//! Without the `parallel` feature, [`ExecMode::Parallel`] silently runs
//! sequentially.

/// How a fan-out loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

impl ExecMode {
    /// True when this mode actually runs on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}
