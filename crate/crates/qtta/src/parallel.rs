use rayon::ThreadPool;

use crate::error::{CliError, Result};

pub const THREADS_ENV: &str = "QTK_THREADS";

/// A pool capped by `QTK_THREADS` when set, otherwise sized by rayon.
pub fn thread_pool() -> Result<ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Internal(e.to_string()))
}
