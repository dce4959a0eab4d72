//! Monte Carlo estimates and the deterministic parallel runner.
//!
//! Paths are generated in parallel but always collected in index order and
//! reduced sequentially, so every estimate is bit-identical for any number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Upper bound on the number of paths in one batch.
pub const MAX_PATHS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub n: u64,
}

impl MCEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as u64;
        if n == 0 {
            return MCEstimate { mean: f64::NAN, se: f64::NAN, n };
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = if n > 1 { ss / (nf - 1.0) } else { 0.0 };
        MCEstimate { mean, se: (var / nf).sqrt(), n }
    }

    pub fn from_fn<T, F: Fn(&T) -> f64>(samples: &[T], f: F) -> Self {
        let v: Vec<f64> = samples.iter().map(f).collect();
        Self::from_values(&v)
    }

    /// `(mean - target) / se`; a zero standard error with an exact match gives 0.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.mean - target;
        if d == 0.0 {
            0.0
        } else {
            d / self.se
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target).abs() <= k
    }
}

static THREAD_OVERRIDE: AtomicUsize = AtomicUsize::new(0);

/// Force a worker count for subsequent runs (0 clears the override).
pub fn set_threads(n: usize) {
    THREAD_OVERRIDE.store(n, Ordering::Relaxed);
}

/// Worker count: explicit override, then `LASTZERO_THREADS`, then the machine.
pub fn thread_count() -> usize {
    let forced = THREAD_OVERRIDE.load(Ordering::Relaxed);
    if forced > 0 {
        return forced;
    }
    std::env::var("LASTZERO_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub(crate) fn check_paths(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::resource("simulate.n", "path budget is zero"));
    }
    if n > MAX_PATHS {
        return Err(Error::resource("simulate.n", format!("{n} paths exceeds the budget of {MAX_PATHS}")));
    }
    Ok(())
}

/// Evaluate `f(i)` for `i in 0..n` and return the results in index order.
pub fn run_paths<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    check_paths(n)?;
    let threads = thread_count();
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::resource("threads", e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_and_known_sample() {
        let e = MCEstimate::from_values(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
        assert_eq!(e.z_score(2.0), 0.0);
        let e = MCEstimate::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((e.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_names_the_field() {
        match run_paths(0, |i| Ok(i)) {
            Err(Error::Resource { field, .. }) => assert_eq!(field, "simulate.n"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_is_preserved() {
        let v = run_paths(1000, |i| Ok(i * 2)).unwrap();
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i as u64));
    }
}
