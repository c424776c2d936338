//! Sample fan-out and order-stable reductions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Runs `f(0..n)` in parallel and returns results in index order. Fails if
/// any sample fails, reporting how many did.
pub fn run_samples<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n as u64).into_par_iter().map(f).collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        let first = results
            .into_iter()
            .find_map(|r| r.err())
            .expect("at least one failure");
        return Err(Error::SamplesFailed {
            failed,
            total: n,
            first: Box::new(first),
        });
    }
    Ok(results.into_iter().map(|r| r.ok().unwrap()).collect())
}

/// Sample mean with standard deviation and standard error. `std_dev` and
/// `stderr` are `None` for a single observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: Option<f64>,
    pub stderr: Option<f64>,
}

impl SampleSummary {
    /// Two-pass summary, summed in slice order.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "empty sample");
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                n,
                mean,
                std_dev: None,
                stderr: None,
            };
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        Self {
            n,
            mean,
            std_dev: Some(sd),
            stderr: Some(sd / (n as f64).sqrt()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_basic() {
        let s = SampleSummary::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.std_dev.unwrap() - sd).abs() < 1e-15);
        assert!((s.stderr.unwrap() - sd / 2.0).abs() < 1e-15);
        let one = SampleSummary::from_values(&[3.0]);
        assert_eq!(one.mean, 3.0);
        assert_eq!(one.stderr, None);
    }

    #[test]
    fn run_samples_keeps_order_and_counts_failures() {
        let v = run_samples(100, |i| Ok(i * 2)).unwrap();
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let err = run_samples(10, |i| {
            if i % 3 == 0 {
                Err(Error::InvalidConfig(format!("bad {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        match err {
            Error::SamplesFailed {
                failed,
                total,
                first,
            } => {
                assert_eq!((failed, total), (4, 10));
                assert_eq!(*first, Error::InvalidConfig("bad 0".into()));
            }
            other => panic!("{other:?}"),
        }
    }
}
