//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel loop in this crate is a per-sample *map*; all reductions
//! run sequentially over the mapped results in sample order, so a
//! [`Exec::Parallel`] run is bit-identical to an [`Exec::Sequential`] one.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

use crate::error::{Error, Result};

/// Environment variable capping worker threads. Absent or `0` means sequential.
pub const THREADS_ENV: &str = "REEFSEG_THREADS";

#[derive(Clone, Default)]
pub enum Exec {
    #[default]
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(Arc<rayon::ThreadPool>),
}

impl Exec {
    /// `0` selects sequential execution.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Exec::Sequential);
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(Exec::Parallel(Arc::new(pool)))
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(Exec::Sequential)
        }
    }

    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                let n: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(vec![format!("{THREADS_ENV}={v} is not a count")]))?;
                Self::with_threads(n)
            }
            _ => Ok(Exec::Sequential),
        }
    }

    pub fn threads(&self) -> usize {
        match self {
            Exec::Sequential => 0,
            #[cfg(feature = "parallel")]
            Exec::Parallel(pool) => pool.current_num_threads(),
        }
    }

    /// `(0..n).map(f).collect()`, possibly spread over the pool.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

impl fmt::Debug for Exec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exec::Sequential => f.write_str("Sequential"),
            #[cfg(feature = "parallel")]
            Exec::Parallel(pool) => write!(f, "Parallel({})", pool.current_num_threads()),
        }
    }
}
