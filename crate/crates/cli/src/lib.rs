//! Experiment runner for basis expanding SVMs: configuration, dataset
//! loading and the subcommands behind the `besvm` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod labels;
pub mod report;

pub use error::{CliError, Result};

use besvm::Execution;

/// Caps the worker pool at `threads` (the value of `BESVM_THREADS`); one
/// thread selects the sequential code path.
pub fn configure_threads(threads: Option<&str>) -> Result<Execution> {
    let Some(raw) = threads else {
        return Ok(Execution::Parallel);
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "BESVM_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    if n == 1 {
        return Ok(Execution::Sequential);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
    {
        log::warn!("could not resize the thread pool: {e}");
    }
    Ok(Execution::Parallel)
}
