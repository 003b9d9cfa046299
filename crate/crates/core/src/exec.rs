//! Pluggable execution of independent work items.

use alloc::vec::Vec;

use crate::error::Result;

/// Maps `f` over `0..n`, returning results in index order. Implementations
/// may run items concurrently; results must not depend on scheduling.
pub trait Executor: Sync {
    fn map(&self, n: usize, f: &(dyn Fn(usize) -> Result<Vec<f64>> + Sync)) -> Result<Vec<Vec<f64>>>;
}

/// Runs items one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map(&self, n: usize, f: &(dyn Fn(usize) -> Result<Vec<f64>> + Sync)) -> Result<Vec<Vec<f64>>> {
        (0..n).map(f).collect()
    }
}
