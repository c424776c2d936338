//! Fine/coarse path pairs driven by one Brownian motion.
//!
//! Each leg keeps its own adaptive grid. A global clock always advances to
//! the earlier of the two legs' next event times; the Brownian increment over
//! that interval is drawn once and accumulated into both legs. A leg applies
//! its Euler update when the clock reaches its event time, using everything
//! accumulated since its previous grid point. Both legs stop at `T`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{run_samples, SampleSummary};
use crate::noise::{BrownianIncrements, Domain, SeededNormals};
use crate::problems::SdeProblem;
use crate::scheme::{euler_update, Local, SchemeConfig, StepRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledSample {
    pub y_coarse: f64,
    pub y_fine: f64,
    pub abs_diff: f64,
    pub n_steps_coarse: u64,
    pub n_steps_fine: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Coarse,
    Fine,
}

/// Hooks into a coupled simulation. All methods default to no-ops.
pub trait CouplingObserver {
    /// One draw of the shared Brownian motion over `dt`.
    fn global_increment(&mut self, _dt: f64, _dw: f64) {}
    /// A leg's Euler update over its own step `dt` with accumulated `dw`.
    fn leg_update(&mut self, _leg: Leg, _dt: f64, _dw: f64) {}
}

pub struct NoObserver;

impl CouplingObserver for NoObserver {}

/// Records every global increment and every leg update.
#[derive(Debug, Default, Clone)]
pub struct CouplingLog {
    pub global: Vec<(f64, f64)>,
    pub coarse: Vec<(f64, f64)>,
    pub fine: Vec<(f64, f64)>,
}

impl CouplingObserver for CouplingLog {
    fn global_increment(&mut self, dt: f64, dw: f64) {
        self.global.push((dt, dw));
    }

    fn leg_update(&mut self, leg: Leg, dt: f64, dw: f64) {
        match leg {
            Leg::Coarse => self.coarse.push((dt, dw)),
            Leg::Fine => self.fine.push((dt, dw)),
        }
    }
}

struct LegState {
    rule: StepRule,
    delta: f64,
    t: f64,
    y: f64,
    local: Local,
    /// Event time of the pending update.
    next: f64,
    /// Increment length of the pending update.
    step_dt: f64,
    last: bool,
    /// Brownian motion accumulated since `t`.
    acc: f64,
    n_steps: u64,
    done: bool,
}

impl LegState {
    fn start(problem: &SdeProblem, config: &SchemeConfig) -> Result<Self> {
        let rule = StepRule::new(config);
        let mut leg = Self {
            rule,
            delta: config.delta,
            t: 0.0,
            y: problem.x0,
            local: rule.local(problem.x0, problem),
            next: 0.0,
            step_dt: 0.0,
            last: false,
            acc: 0.0,
            n_steps: 0,
            done: false,
        };
        leg.plan(problem, config)?;
        Ok(leg)
    }

    /// Mirrors one iteration of [`crate::scheme::walk`] up to the increment draw.
    fn plan(&mut self, problem: &SdeProblem, config: &SchemeConfig) -> Result<()> {
        if self.n_steps >= config.max_steps {
            return Err(Error::StepCapExceeded {
                max_steps: config.max_steps,
                t: self.t,
                y: self.y,
                delta: self.delta,
            });
        }
        self.n_steps += 1;
        self.local = self.rule.local(self.y, problem);
        let t_next = self.t + self.local.step;
        if !(t_next > self.t) {
            return Err(Error::StepUnderflow {
                t: self.t,
                step: self.local.step,
            });
        }
        self.last = !(t_next < config.t_end);
        if self.last {
            self.step_dt = config.t_end - self.t;
            self.next = config.t_end;
        } else {
            self.step_dt = self.local.step;
            self.next = t_next;
        }
        Ok(())
    }

    fn fire(
        &mut self,
        leg: Leg,
        problem: &SdeProblem,
        config: &SchemeConfig,
        observer: &mut dyn CouplingObserver,
    ) -> Result<()> {
        observer.leg_update(leg, self.step_dt, self.acc);
        self.y = euler_update(
            self.y,
            self.local.drift,
            self.local.sigma_tamed,
            self.step_dt,
            self.acc,
        );
        if !self.y.is_finite() {
            return Err(Error::NonFinite {
                t: self.t,
                delta: self.delta,
            });
        }
        self.acc = 0.0;
        if self.last {
            self.done = true;
            Ok(())
        } else {
            self.t = self.next;
            self.plan(problem, config)
        }
    }
}

/// Coupled simulation at two arbitrary step parameters. With
/// `delta_fine == delta_coarse` both legs are identical.
pub fn simulate_coupled_pair<B>(
    problem: &SdeProblem,
    delta_coarse: f64,
    delta_fine: f64,
    config: &SchemeConfig,
    noise: &mut B,
    observer: &mut dyn CouplingObserver,
) -> Result<CoupledSample>
where
    B: BrownianIncrements + ?Sized,
{
    let coarse_cfg = config.at_delta(delta_coarse)?;
    let fine_cfg = config.at_delta(delta_fine)?;
    let mut coarse = LegState::start(problem, &coarse_cfg)?;
    let mut fine = LegState::start(problem, &fine_cfg)?;
    let mut clock = 0.0;
    while !(coarse.done && fine.done) {
        let next = match (coarse.done, fine.done) {
            (false, false) => coarse.next.min(fine.next),
            (false, true) => coarse.next,
            (true, false) => fine.next,
            (true, true) => unreachable!(),
        };
        let dt = next - clock;
        let dw = noise.increment(dt);
        observer.global_increment(dt, dw);
        if !coarse.done {
            coarse.acc += dw;
        }
        if !fine.done {
            fine.acc += dw;
        }
        clock = next;
        if !coarse.done && coarse.next == clock {
            coarse.fire(Leg::Coarse, problem, &coarse_cfg, observer)?;
        }
        if !fine.done && fine.next == clock {
            fine.fire(Leg::Fine, problem, &fine_cfg, observer)?;
        }
    }
    Ok(CoupledSample {
        y_coarse: coarse.y,
        y_fine: fine.y,
        abs_diff: (fine.y - coarse.y).abs(),
        n_steps_coarse: coarse.n_steps,
        n_steps_fine: fine.n_steps,
    })
}

/// Coarse leg at `delta_coarse`, fine leg at `delta_coarse / 2`.
pub fn simulate_coupled<B>(
    problem: &SdeProblem,
    delta_coarse: f64,
    config: &SchemeConfig,
    noise: &mut B,
) -> Result<CoupledSample>
where
    B: BrownianIncrements + ?Sized,
{
    simulate_coupled_pair(
        problem,
        delta_coarse,
        0.5 * delta_coarse,
        config,
        noise,
        &mut NoObserver,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelEstimate {
    pub delta_coarse: f64,
    pub delta_fine: f64,
    pub n_samples: usize,
    pub mean_abs_diff: f64,
    pub std_dev: f64,
    pub stderr: f64,
    pub mean_steps_coarse: f64,
    pub mean_steps_fine: f64,
}

impl LevelEstimate {
    fn from_samples(delta_coarse: f64, delta_fine: f64, samples: &[CoupledSample]) -> Self {
        let diffs: Vec<f64> = samples.iter().map(|s| s.abs_diff).collect();
        let coarse: Vec<f64> = samples.iter().map(|s| s.n_steps_coarse as f64).collect();
        let fine: Vec<f64> = samples.iter().map(|s| s.n_steps_fine as f64).collect();
        let d = SampleSummary::from_values(&diffs);
        Self {
            delta_coarse,
            delta_fine,
            n_samples: samples.len(),
            mean_abs_diff: d.mean,
            std_dev: d.std_dev.unwrap_or(0.0),
            stderr: d.stderr.unwrap_or(0.0),
            mean_steps_coarse: SampleSummary::from_values(&coarse).mean,
            mean_steps_fine: SampleSummary::from_values(&fine).mean,
        }
    }
}

/// `n_samples` coupled samples at one level. Sample `i` draws its noise from
/// the stream keyed by `(master_seed, bits of delta_coarse, i)`.
pub fn sample_level(
    problem: &SdeProblem,
    delta_coarse: f64,
    config: &SchemeConfig,
    n_samples: usize,
    master_seed: u64,
) -> Result<LevelEstimate> {
    let group = delta_coarse.to_bits();
    sample_level_with(
        problem,
        delta_coarse,
        0.5 * delta_coarse,
        config,
        n_samples,
        |i| SeededNormals::new(master_seed, Domain::Coupled, group, i),
    )
}

/// [`sample_level`] with explicit fine parameter and stream assignment.
pub fn sample_level_with<F>(
    problem: &SdeProblem,
    delta_coarse: f64,
    delta_fine: f64,
    config: &SchemeConfig,
    n_samples: usize,
    stream_for: F,
) -> Result<LevelEstimate>
where
    F: Fn(u64) -> SeededNormals + Sync + Send,
{
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "a level needs at least 2 samples, got {n_samples}"
        )));
    }
    config.at_delta(delta_coarse)?;
    config.at_delta(delta_fine)?;
    let samples = run_samples(n_samples, |i| {
        let mut noise = stream_for(i);
        simulate_coupled_pair(
            problem,
            delta_coarse,
            delta_fine,
            config,
            &mut noise,
            &mut NoObserver,
        )
    })?;
    Ok(LevelEstimate::from_samples(
        delta_coarse,
        delta_fine,
        &samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{IncrementReplay, ZeroNoise};
    use crate::problems::get_problem;
    use crate::scheme::{simulate_path, LogBase};

    fn base10(t_end: f64) -> SchemeConfig {
        SchemeConfig::new(1e-3, t_end)
            .unwrap()
            .with_log_base(LogBase::Base10)
    }

    fn frozen() -> SdeProblem {
        SdeProblem::builder("frozen", |_| 0.0, |_| 0.0)
            .x0(1.0)
            .eta(0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn frozen_problem_has_zero_difference() {
        let mut noise = SeededNormals::new(1, Domain::Coupled, 0, 0);
        let s = simulate_coupled(&frozen(), 1e-2, &base10(1.0), &mut noise).unwrap();
        assert_eq!(s.abs_diff, 0.0);
        assert_eq!(s.y_fine, 1.0);
        let lvl = sample_level(&frozen(), 1e-2, &base10(1.0), 10, 3).unwrap();
        assert_eq!(lvl.mean_abs_diff, 0.0);
        assert_eq!(lvl.stderr, 0.0);
    }

    #[test]
    fn equal_parameters_give_identical_legs() {
        let p = get_problem("ex1").unwrap();
        let mut noise = SeededNormals::new(2, Domain::Coupled, 0, 0);
        let s = simulate_coupled_pair(&p, 1e-3, 1e-3, &base10(1.0), &mut noise, &mut NoObserver)
            .unwrap();
        assert_eq!(s.y_fine.to_bits(), s.y_coarse.to_bits());
        assert_eq!(s.n_steps_fine, s.n_steps_coarse);
        assert_eq!(s.abs_diff, 0.0);
    }

    #[test]
    fn abs_diff_is_exact() {
        let p = get_problem("ex3").unwrap();
        let mut noise = SeededNormals::new(3, Domain::Coupled, 0, 0);
        let s = simulate_coupled(&p, 1e-3, &base10(1.0), &mut noise).unwrap();
        assert_eq!(s.abs_diff, (s.y_fine - s.y_coarse).abs());
        assert!(s.n_steps_fine > s.n_steps_coarse);
    }

    #[test]
    fn legs_reproduce_standalone_paths() {
        let p = get_problem("ex1").unwrap();
        let config = base10(0.5);
        let mut noise = SeededNormals::new(4, Domain::Coupled, 0, 0);
        let mut log = CouplingLog::default();
        let s = simulate_coupled_pair(&p, 1e-3, 5e-4, &config, &mut noise, &mut log).unwrap();

        let mut replay = IncrementReplay::new(log.coarse.clone());
        let coarse = simulate_path(&p, &config.at_delta(1e-3).unwrap(), &mut replay).unwrap();
        assert_eq!(coarse.y_end.to_bits(), s.y_coarse.to_bits());
        assert_eq!(coarse.n_steps, s.n_steps_coarse);
        assert_eq!(replay.remaining(), 0);

        let mut replay = IncrementReplay::new(log.fine.clone());
        let fine = simulate_path(&p, &config.at_delta(5e-4).unwrap(), &mut replay).unwrap();
        assert_eq!(fine.y_end.to_bits(), s.y_fine.to_bits());
    }

    #[test]
    fn both_legs_see_the_same_brownian_path() {
        let p = get_problem("ex4").unwrap();
        let config = base10(1.0);
        let mut noise = SeededNormals::new(5, Domain::Coupled, 0, 0);
        let mut log = CouplingLog::default();
        simulate_coupled(&p, 1e-3, &config, &mut noise).unwrap();
        simulate_coupled_pair(&p, 1e-3, 5e-4, &config, &mut noise, &mut log).unwrap();
        let total: f64 = log.global.iter().map(|g| g.1).sum();
        let coarse: f64 = log.coarse.iter().map(|g| g.1).sum();
        let fine: f64 = log.fine.iter().map(|g| g.1).sum();
        assert!((coarse - total).abs() < 1e-12);
        assert!((fine - total).abs() < 1e-12);
        let horizon: f64 = log.global.iter().map(|g| g.0).sum();
        assert!((horizon - 1.0).abs() < 1e-12);
        let coarse_time: f64 = log.coarse.iter().map(|g| g.0).sum();
        assert!((coarse_time - 1.0).abs() < 1e-12);
        // global clock strictly increases
        assert!(log.global.iter().all(|g| g.0 > 0.0));
    }

    #[test]
    fn zero_noise_legs_are_deterministic_skeletons() {
        let p = get_problem("ex1").unwrap();
        let config = base10(0.3);
        let a = simulate_coupled(&p, 1e-3, &config, &mut ZeroNoise).unwrap();
        let b = simulate_coupled(&p, 1e-3, &config, &mut ZeroNoise).unwrap();
        assert_eq!(a, b);
        let solo = simulate_path(&p, &config, &mut ZeroNoise).unwrap();
        assert_eq!(solo.y_end.to_bits(), a.y_coarse.to_bits());
    }

    #[test]
    fn duplicated_stream_has_zero_stderr() {
        let p = get_problem("ex1").unwrap();
        let lvl = sample_level_with(&p, 1e-3, 5e-4, &base10(0.2), 2, |_| {
            SeededNormals::new(11, Domain::Coupled, 0, 0)
        })
        .unwrap();
        assert_eq!(lvl.stderr, 0.0);
        assert!(lvl.mean_abs_diff >= 0.0);
    }

    #[test]
    fn level_needs_two_samples() {
        assert!(sample_level(&frozen(), 1e-2, &base10(1.0), 1, 0).is_err());
    }

    #[test]
    fn level_failures_are_counted() {
        let p = get_problem("ex1").unwrap();
        let config = base10(1.0).with_max_steps(5);
        match sample_level(&p, 1e-3, &config, 4, 0).unwrap_err() {
            Error::SamplesFailed { failed, total, .. } => assert_eq!((failed, total), (4, 4)),
            other => panic!("{other:?}"),
        }
    }
}
