//! Order-preserving fan-out for per-sample work.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable capping intra-epoch parallelism; `0` means sequential.
pub const THREADS_ENV: &str = "CURRISEG_THREADS";

/// Runs per-item closures either inline or on a dedicated rayon pool.
/// Results always come back in input order, so reductions over them are
/// bit-identical whatever the thread count.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads()).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    /// Reads [`THREADS_ENV`]; unset or empty means sequential.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                let n = v
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
                Self::with_threads(n)
            }
            _ => Ok(Self::sequential()),
        }
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(0, |p| p.current_num_threads())
    }

    pub fn map<I, R, F>(&self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(&I) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter().map(f).collect(),
            Some(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let items: Vec<u64> = (0..100).collect();
        let seq = Executor::sequential().map(&items, |x| x * x);
        let par = Executor::with_threads(3).unwrap().map(&items, |x| x * x);
        assert_eq!(seq, par);
    }
}
