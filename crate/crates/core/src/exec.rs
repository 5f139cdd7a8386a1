//! Execution strategy for embarrassingly parallel loops.
//!
//! The core never spawns threads itself. Callers hand in an [`Executor`];
//! `nmfrank` provides a rayon-backed one. Every implementation must return
//! results in index order so that output is independent of scheduling.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(0), …, f(len-1)` and returns the results in index order.
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }
}

/// Collects index-ordered results, returning the lowest-index error.
pub(crate) fn collect_ordered<T, E>(results: Vec<core::result::Result<T, E>>) -> core::result::Result<Vec<T>, E> {
    results.into_iter().collect()
}
