//! Reproducible experiment runner for `kinetic-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod io;
pub mod tasks;

use std::path::PathBuf;

use kinetic_core::exec::Executor;
use rayon::prelude::*;

pub use config::{ExperimentConfig, Task};
pub use tasks::{run_experiment, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum KkError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Numeric(#[from] kinetic_core::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl KkError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        KkError::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KkError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for bad input, 3 for failed numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            KkError::Validation { .. } | KkError::Io { .. } => 2,
            KkError::Numeric(kinetic_core::Error::Domain(_)) => 2,
            KkError::Numeric(_) => 3,
        }
    }
}

/// Worker pool sized by `KK_THREADS` (unset or 0 means one per core).
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    pub fn new(threads: usize) -> Result<Self, KkError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| KkError::validation("KK_THREADS", e.to_string()))?;
        Ok(Pool { pool })
    }

    pub fn from_env() -> Result<Self, KkError> {
        let threads = match std::env::var("KK_THREADS") {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse::<usize>()
                .map_err(|_| KkError::validation("KK_THREADS", format!("`{v}` is not a non-negative integer")))?,
            _ => 0,
        };
        Pool::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> kinetic_core::Result<Vec<f64>> + Sync),
    ) -> kinetic_core::Result<Vec<Vec<f64>>> {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
