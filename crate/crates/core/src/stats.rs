//! Regression fits and the convergence-rate / cost-exponent experiments.
//!
//! Rate: for levels `k = 1..K` the coarse parameter is `Δ_k = 2^{-k} Δ₀` and
//! the fine one `Δ_k / 2`. The mean absolute terminal difference `r̃_k` is
//! regressed as `log r̃_k` against `−k log 2`; the slope is the empirical
//! rate. Cost: mean step count `N_T` regressed as `log N_T` against `log Δ`.
//! All logarithms here are natural.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::coupling::{sample_level, LevelEstimate};
use crate::error::{Error, Result};
use crate::mc::{run_samples, SampleSummary};
use crate::noise::{Domain, SeededNormals};
use crate::problems::SdeProblem;
use crate::scheme::{simulate_path, SchemeConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    #[serde(rename = "slope_ci")]
    pub slope_ci95: (f64, f64),
    #[serde(rename = "intercept_ci")]
    pub intercept_ci95: (f64, f64),
    pub n_points: usize,
    pub r_squared: f64,
}

/// Ordinary least squares with two-sided 95% Student-t intervals on `n − 2`
/// degrees of freedom.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 3 points, got {n}"
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegenerateDesign("non-finite coordinate".into()));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateDesign("x values are all equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let dof = nf - 2.0;
    let s2 = sse / dof;
    let slope_stderr = (s2 / sxx).sqrt();
    let intercept_stderr = (s2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RegressionFit {
        slope,
        intercept,
        slope_stderr,
        intercept_stderr,
        slope_ci95: (slope - t * slope_stderr, slope + t * slope_stderr),
        intercept_ci95: (
            intercept - t * intercept_stderr,
            intercept + t * intercept_stderr,
        ),
        n_points: n,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateLevel {
    pub k: usize,
    pub estimate: LevelEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateExperiment {
    pub problem: String,
    pub delta0: f64,
    pub levels: usize,
    pub samples: Vec<usize>,
    pub t_end: f64,
    pub master_seed: u64,
    pub per_level: Vec<RateLevel>,
    pub fit: RegressionFit,
}

impl RateExperiment {
    /// Empirical convergence rate.
    pub fn rate(&self) -> f64 {
        self.fit.slope
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "k,delta_coarse,delta_fine,n_samples,mean_abs_diff,stderr"
        )?;
        for l in &self.per_level {
            let e = &l.estimate;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                l.k, e.delta_coarse, e.delta_fine, e.n_samples, e.mean_abs_diff, e.stderr
            )?;
        }
        Ok(())
    }
}

/// Level plan for a rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePlan {
    pub delta0: f64,
    /// Samples per level; its length is the number of levels `K`.
    pub samples: Vec<usize>,
    pub t_end: f64,
    pub master_seed: u64,
}

impl RatePlan {
    pub fn uniform(
        delta0: f64,
        levels: usize,
        samples: usize,
        t_end: f64,
        master_seed: u64,
    ) -> Self {
        Self {
            delta0,
            samples: vec![samples; levels],
            t_end,
            master_seed,
        }
    }

    /// Coarse parameter of level `k` (1-based).
    pub fn delta_coarse(&self, k: usize) -> f64 {
        self.delta0 * 0.5f64.powi(k as i32)
    }
}

/// Runs a rate experiment with an arbitrary level sampler
/// `(k, delta_coarse, n_samples) -> LevelEstimate`.
pub fn estimate_rate_with<F>(
    problem_name: &str,
    plan: &RatePlan,
    mut sampler: F,
) -> Result<RateExperiment>
where
    F: FnMut(usize, f64, usize) -> Result<LevelEstimate>,
{
    if plan.samples.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "a rate fit needs at least 3 levels, got {}",
            plan.samples.len()
        )));
    }
    let mut per_level = Vec::with_capacity(plan.samples.len());
    for (i, &n) in plan.samples.iter().enumerate() {
        let k = i + 1;
        let estimate = sampler(k, plan.delta_coarse(k), n)?;
        if !(estimate.mean_abs_diff > 0.0) {
            return Err(Error::DegenerateLevel {
                level: k,
                mean: estimate.mean_abs_diff,
            });
        }
        per_level.push(RateLevel { k, estimate });
    }
    let points: Vec<(f64, f64)> = per_level
        .iter()
        .map(|l| {
            (
                -(l.k as f64) * std::f64::consts::LN_2,
                l.estimate.mean_abs_diff.ln(),
            )
        })
        .collect();
    let fit = ols_fit(&points)?;
    Ok(RateExperiment {
        problem: problem_name.to_string(),
        delta0: plan.delta0,
        levels: plan.samples.len(),
        samples: plan.samples.clone(),
        t_end: plan.t_end,
        master_seed: plan.master_seed,
        per_level,
        fit,
    })
}

/// Rate experiment with coupled fine/coarse samples. `config` supplies the
/// log base and step cap; its `delta` and `t_end` are overridden.
pub fn estimate_rate(
    problem: &SdeProblem,
    plan: &RatePlan,
    config: &SchemeConfig,
) -> Result<RateExperiment> {
    let config = config.at_horizon(plan.t_end)?.recording(false);
    estimate_rate_with(&problem.name, plan, |_, delta, n| {
        sample_level(problem, delta, &config, n, plan.master_seed)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterceptShift {
    pub t_end_a: f64,
    pub t_end_b: f64,
    pub intercept_a: f64,
    pub intercept_b: f64,
    pub abs_difference: f64,
    pub experiment_a: RateExperiment,
    pub experiment_b: RateExperiment,
}

impl InterceptShift {
    pub fn from_experiments(a: RateExperiment, b: RateExperiment) -> Self {
        Self {
            t_end_a: a.t_end,
            t_end_b: b.t_end,
            intercept_a: a.fit.intercept,
            intercept_b: b.fit.intercept,
            abs_difference: (a.fit.intercept - b.fit.intercept).abs(),
            experiment_a: a,
            experiment_b: b,
        }
    }
}

/// Rate-fit intercepts at two horizons with the same level plan and seed.
pub fn intercept_shift(
    problem: &SdeProblem,
    plan: &RatePlan,
    t_end_b: f64,
    config: &SchemeConfig,
) -> Result<InterceptShift> {
    let a = estimate_rate(problem, plan, config)?;
    let plan_b = RatePlan {
        t_end: t_end_b,
        ..plan.clone()
    };
    let b = estimate_rate(problem, &plan_b, config)?;
    Ok(InterceptShift::from_experiments(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostPoint {
    pub delta: f64,
    pub n_samples: usize,
    pub mean_steps: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostExperiment {
    pub problem: String,
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub t_end: f64,
    pub master_seed: u64,
    pub per_delta: Vec<CostPoint>,
    pub fit: RegressionFit,
}

impl CostExperiment {
    /// Empirical cost exponent.
    pub fn exponent(&self) -> f64 {
        self.fit.slope
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "delta,n_samples,mean_steps,stderr")?;
        for p in &self.per_delta {
            writeln!(
                out,
                "{},{},{},{}",
                p.delta, p.n_samples, p.mean_steps, p.stderr
            )?;
        }
        Ok(())
    }
}

/// Cost experiment with an arbitrary sampler `(index, delta) -> CostPoint`.
pub fn estimate_cost_with<F>(
    problem_name: &str,
    deltas: &[f64],
    samples: usize,
    t_end: f64,
    master_seed: u64,
    mut sampler: F,
) -> Result<CostExperiment>
where
    F: FnMut(usize, f64) -> Result<CostPoint>,
{
    let mut distinct = deltas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "a cost fit needs at least 3 distinct deltas, got {}",
            distinct.len()
        )));
    }
    let per_delta = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| sampler(i, d))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = per_delta
        .iter()
        .map(|p| (p.delta.ln(), p.mean_steps.ln()))
        .collect();
    let fit = ols_fit(&points)?;
    Ok(CostExperiment {
        problem: problem_name.to_string(),
        deltas: deltas.to_vec(),
        samples,
        t_end,
        master_seed,
        per_delta,
        fit,
    })
}

/// Mean step count `N_T` per Δ from independent standalone paths.
pub fn estimate_cost(
    problem: &SdeProblem,
    deltas: &[f64],
    samples: usize,
    t_end: f64,
    master_seed: u64,
    config: &SchemeConfig,
) -> Result<CostExperiment> {
    if samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "cost needs at least 2 samples per delta, got {samples}"
        )));
    }
    let base = config.at_horizon(t_end)?.recording(false);
    estimate_cost_with(
        &problem.name,
        deltas,
        samples,
        t_end,
        master_seed,
        |_, delta| {
            let cfg = base.at_delta(delta)?;
            let group = delta.to_bits();
            let steps = run_samples(samples, |i| {
                let mut noise = SeededNormals::new(master_seed, Domain::Cost, group, i);
                simulate_path(problem, &cfg, &mut noise).map(|o| o.n_steps as f64)
            })?;
            let s = SampleSummary::from_values(&steps);
            Ok(CostPoint {
                delta,
                n_samples: samples,
                mean_steps: s.mean,
                stderr: s.stderr.unwrap_or(0.0),
            })
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stub_level(delta_coarse: f64, mean: f64) -> LevelEstimate {
        LevelEstimate {
            delta_coarse,
            delta_fine: delta_coarse / 2.0,
            n_samples: 10,
            mean_abs_diff: mean,
            std_dev: 0.0,
            stderr: 0.0,
            mean_steps_coarse: 1.0,
            mean_steps_fine: 1.0,
        }
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let f = ols_fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        let f = ols_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert_eq!((f.slope, f.intercept), (1.0, 0.0));
    }

    #[test]
    fn degenerate_designs() {
        assert!(matches!(
            ols_fit(&[(0.0, 0.0), (1.0, 1.0)]),
            Err(Error::DegenerateDesign(_))
        ));
        assert!(matches!(
            ols_fit(&[(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn known_noisy_fit() {
        // x = 1..5, y = 2.1 3.9 6.2 7.8 10.1: hand-computed OLS
        let pts = [(1.0, 2.1), (2.0, 3.9), (3.0, 6.2), (4.0, 7.8), (5.0, 10.1)];
        let f = ols_fit(&pts).unwrap();
        assert!((f.slope - 1.99).abs() < 1e-12);
        assert!((f.intercept - 0.05).abs() < 1e-12);
        // sse = 0.107, s2 = 0.107/3, se(slope) = sqrt(s2/10)
        let se = (0.107f64 / 3.0 / 10.0).sqrt();
        assert!((f.slope_stderr - se).abs() < 1e-12);
        // t_{0.975, 3} = 3.182446305284263
        let half = f.slope_ci95.1 - f.slope;
        assert!((half - 3.182446305284263 * se).abs() < 1e-9);
        assert!(f.slope_ci95.0 < f.slope && f.slope < f.slope_ci95.1);
    }

    #[test]
    fn stubbed_geometric_decay_recovers_rate() {
        for alpha in [0.0, 1.0 / 6.0, 0.5] {
            let plan = RatePlan::uniform(1.8e-4, 5, 10, 1.0, 0);
            let exp = estimate_rate_with("stub", &plan, |k, d, _| {
                Ok(stub_level(d, 0.3 * 2f64.powf(-(k as f64) * alpha)))
            })
            .unwrap();
            assert!((exp.rate() - alpha).abs() < 1e-12, "{alpha} {}", exp.rate());
            assert!((exp.fit.intercept - 0.3f64.ln()).abs() < 1e-12);
            assert_eq!(exp.per_level[2].estimate.delta_coarse, 1.8e-4 / 8.0);
        }
    }

    #[test]
    fn zero_level_is_rejected() {
        let plan = RatePlan::uniform(1e-3, 4, 10, 1.0, 0);
        let err = estimate_rate_with("stub", &plan, |k, d, _| {
            Ok(stub_level(d, if k == 2 { 0.0 } else { 1.0 }))
        })
        .unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateLevel {
                level: 2,
                mean: 0.0
            }
        );
        let short = RatePlan::uniform(1e-3, 2, 10, 1.0, 0);
        assert!(estimate_rate_with("stub", &short, |_, d, _| Ok(stub_level(d, 1.0))).is_err());
    }

    #[test]
    fn stubbed_inverse_cost_recovers_minus_one() {
        let deltas = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
        let exp = estimate_cost_with("stub", &deltas, 10, 1.0, 0, |_, d| {
            Ok(CostPoint {
                delta: d,
                n_samples: 10,
                mean_steps: 7.0 / d,
                stderr: 0.0,
            })
        })
        .unwrap();
        assert!((exp.exponent() + 1.0).abs() < 1e-12);
        assert!((exp.fit.intercept - 7f64.ln()).abs() < 1e-10);
        assert!(
            estimate_cost_with("stub", &[1e-3, 1e-3, 5e-4], 1, 1.0, 0, |_, d| {
                Ok(CostPoint {
                    delta: d,
                    n_samples: 1,
                    mean_steps: 1.0,
                    stderr: 0.0,
                })
            })
            .is_err()
        );
    }

    #[test]
    fn identical_levels_give_zero_intercept_shift() {
        let plan = RatePlan::uniform(1e-3, 4, 10, 1.0, 0);
        let run = |t: f64| {
            let p = RatePlan {
                t_end: t,
                ..plan.clone()
            };
            estimate_rate_with("stub", &p, |k, d, _| {
                Ok(stub_level(d, 2f64.powi(-(k as i32))))
            })
            .unwrap()
        };
        let shift = InterceptShift::from_experiments(run(1.0), run(5.0));
        assert_eq!(shift.abs_difference, 0.0);
        assert_eq!((shift.t_end_a, shift.t_end_b), (1.0, 5.0));
    }

    #[test]
    fn csv_headers() {
        let plan = RatePlan::uniform(1e-3, 3, 10, 1.0, 0);
        let exp =
            estimate_rate_with("stub", &plan, |k, d, _| Ok(stub_level(d, 1.0 / k as f64))).unwrap();
        let mut buf = Vec::new();
        exp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("k,delta_coarse,delta_fine,n_samples,mean_abs_diff,stderr")
        );
        assert_eq!(lines.next(), Some("1,0.0005,0.00025,10,1,0"));
        assert_eq!(text.lines().count(), 4);
        let json = serde_json::to_value(&exp.fit).unwrap();
        for key in [
            "slope",
            "intercept",
            "slope_ci",
            "intercept_ci",
            "r_squared",
            "n_points",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn shift_in_y_moves_only_intercept(
            ys in proptest::collection::vec(-10.0f64..10.0, 3..12),
            c in -5.0f64..5.0,
        ) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
            let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y + c)).collect();
            let a = ols_fit(&pts).unwrap();
            let b = ols_fit(&moved).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            prop_assert!((b.intercept - a.intercept - c).abs() < 1e-9);
            prop_assert!(a.slope_ci95.0 <= a.slope && a.slope <= a.slope_ci95.1);
        }

        #[test]
        fn decreasing_data_has_negative_slope(
            steps in proptest::collection::vec(0.01f64..3.0, 3..12),
        ) {
            let mut y = 0.0;
            let pts: Vec<(f64, f64)> = steps.iter().enumerate().map(|(i, s)| {
                y -= s;
                (i as f64, y)
            }).collect();
            prop_assert!(ols_fit(&pts).unwrap().slope < 0.0);
        }
    }
}
