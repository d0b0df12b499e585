//! Worker-count control.
//!
//! Parallel sections only split work across independent images and collect
//! results in input order, so outputs do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const WORKERS_ENV: &str = "BAGNET_WORKERS";

/// Worker count from `BAGNET_WORKERS`, defaulting to 1.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

/// Run `f` inside a pool of exactly `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Order-preserving parallel map with early error return.
pub fn try_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_iter().map(f).collect()
}
