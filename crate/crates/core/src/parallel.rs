//! Worker-count control.
//!
//! Every parallel loop in the crate collects results in input order and
//! reduces them sequentially, so outputs do not depend on the thread count.

use rayon::prelude::*;

/// Environment variable capping the worker count; `0` or unset means one
/// worker per available core.
pub const THREADS_ENV: &str = "SEPKERN_THREADS";

/// Worker count requested through [`THREADS_ENV`], if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a pool sized by [`THREADS_ENV`].
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    with_threads(requested_threads().unwrap_or(0), f)
}

/// Runs `f` inside a pool of `threads` workers (`0` = automatic).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Order-preserving parallel map.
pub fn ordered_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    items.par_iter().map(f).collect()
}
