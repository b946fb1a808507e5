//! Command-line front end: configuration, training and rendering commands,
//! the oracle suite and benchmarks.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

use anyhow::{Context, Result};

/// Thread count from the flag, then `FC2T2_THREADS`, else all cores.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("FC2T2_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().with_context(|| format!("FC2T2_THREADS must be a positive integer, got {v:?}"))?;
            anyhow::ensure!(n > 0, "FC2T2_THREADS must be positive");
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

/// Caps the global worker pool. Only the first call in a process takes
/// effect.
pub fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        anyhow::ensure!(n > 0, "threads must be positive");
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
