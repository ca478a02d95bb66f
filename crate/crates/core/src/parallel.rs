//! Bounded worker pools whose output order never depends on scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maps `f` over `items`, preserving order. `workers <= 1` runs inline on the
/// calling thread; otherwise a dedicated pool of `workers` threads is used.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() < 2 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}
