//! The tamed-adaptive Euler–Maruyama integrator.
//!
//! From the current state `y` the scheme takes a step of length `h_Δ(y)` and
//! applies
//!
//! ```text
//! Y_{t} = Y_{t_i} + b(Y_{t_i}) (t − t_i) + σ_Δ(Y_{t_i}) (W_t − W_{t_i}),   t_i < t ≤ t_{i+1}
//! σ_Δ(x) = σ(x) / (1 + √Δ |σ(x)|)
//! ```
//!
//! The step `h_Δ` has three regimes depending on the distance `d` from `y` to
//! the drift discontinuity set Ξ, with `ε₁ = √Δ log²(1/Δ)` and
//! `ε₂ = Δ log⁴(1/Δ)` and `D = 1 + |b| + |σ| + |x|^l`:
//!
//! ```text
//! d > ε₁        h = Δ / D²
//! ε₂ < d ≤ ε₁   h = d² / (log⁴(1/Δ) D²)
//! d ≤ ε₂        h = Δ² log⁴(1/Δ) / D²
//! ```
//!
//! The branches are tested in that order, so when `ε₂ ≥ ε₁` (a step parameter
//! outside the validity window) the middle branch is empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{run_samples, SampleSummary};
use crate::noise::{BrownianIncrements, Domain, GaussianStream, SeededNormals};
use crate::problems::SdeProblem;

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    #[serde(rename = "10")]
    Base10,
}

impl LogBase {
    #[inline]
    pub fn log(self, v: f64) -> f64 {
        match self {
            LogBase::Natural => v.ln(),
            LogBase::Base10 => v.log10(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "natural" | "e" | "ln" => Ok(LogBase::Natural),
            "10" | "base10" => Ok(LogBase::Base10),
            other => Err(format!("unknown log base `{other}` (use natural or 10)")),
        }
    }
}

impl std::fmt::Display for LogBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogBase::Natural => f.write_str("natural"),
            LogBase::Base10 => f.write_str("10"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub delta: f64,
    pub t_end: f64,
    pub log_base: LogBase,
    pub max_steps: u64,
    pub record_trajectory: bool,
}

impl SchemeConfig {
    pub fn new(delta: f64, t_end: f64) -> Result<Self> {
        let config = Self {
            delta,
            t_end,
            log_base: LogBase::Natural,
            max_steps: DEFAULT_MAX_STEPS,
            record_trajectory: false,
        };
        config.check()?;
        Ok(config)
    }

    pub fn with_log_base(mut self, log_base: LogBase) -> Self {
        self.log_base = log_base;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn recording(mut self, record: bool) -> Self {
        self.record_trajectory = record;
        self
    }

    /// Same settings at a different step parameter.
    pub fn at_delta(&self, delta: f64) -> Result<Self> {
        let c = Self {
            delta,
            ..self.clone()
        };
        c.check()?;
        Ok(c)
    }

    /// Same settings at a different horizon.
    pub fn at_horizon(&self, t_end: f64) -> Result<Self> {
        let c = Self {
            t_end,
            ..self.clone()
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// `log(1/Δ)` in the configured base.
    #[inline]
    pub fn log_inv_delta(&self) -> f64 {
        self.log_base.log(1.0 / self.delta)
    }

    /// `ε₁ = √Δ log²(1/Δ)`.
    pub fn eps1(&self) -> f64 {
        let lg = self.log_inv_delta();
        self.delta.sqrt() * lg * lg
    }

    /// `ε₂ = Δ log⁴(1/Δ)`.
    pub fn eps2(&self) -> f64 {
        let lg2 = self.log_inv_delta().powi(2);
        self.delta * lg2 * lg2
    }
}

/// `σ / (1 + √Δ |σ|)` applied to a raw diffusion value.
#[inline]
pub fn tame(sigma: f64, delta: f64) -> f64 {
    sigma / (1.0 + delta.sqrt() * sigma.abs())
}

pub fn sigma_tamed(x: f64, delta: f64, problem: &SdeProblem) -> f64 {
    tame(problem.diffusion(x), delta)
}

/// Which regime of the step-size map applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepBranch {
    /// `d(x, Ξ) > ε₁`.
    Far,
    /// `ε₂ < d(x, Ξ) ≤ ε₁`.
    Near,
    /// `d(x, Ξ) ≤ ε₂`.
    Core,
}

pub fn classify(dist: f64, config: &SchemeConfig) -> StepBranch {
    StepRule::new(config).classify(dist)
}

/// `1 + |b(x)| + |σ(x)| + |x|^l`.
#[inline]
fn growth_scale(x: f64, drift: f64, sigma: f64, l: f64) -> f64 {
    let ax = x.abs();
    let pow = if l == 1.0 {
        ax
    } else if l == 2.0 {
        ax * ax
    } else {
        ax.powf(l)
    };
    1.0 + drift.abs() + sigma.abs() + pow
}

/// Step-size constants precomputed from a configuration.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepRule {
    delta: f64,
    eps1: f64,
    eps2: f64,
    /// `log⁴(1/Δ)`.
    log4: f64,
}

impl StepRule {
    pub(crate) fn new(config: &SchemeConfig) -> Self {
        let lg2 = config.log_inv_delta().powi(2);
        Self {
            delta: config.delta,
            eps1: config.eps1(),
            eps2: config.eps2(),
            log4: lg2 * lg2,
        }
    }

    #[inline]
    fn classify(&self, dist: f64) -> StepBranch {
        if dist > self.eps1 {
            StepBranch::Far
        } else if dist > self.eps2 {
            StepBranch::Near
        } else {
            StepBranch::Core
        }
    }

    #[inline]
    fn formula(&self, branch: StepBranch, dist: f64, scale: f64) -> f64 {
        let s2 = scale * scale;
        match branch {
            StepBranch::Far => self.delta / s2,
            StepBranch::Near => dist * dist / (self.log4 * s2),
            StepBranch::Core => self.delta * self.delta * self.log4 / s2,
        }
    }

    #[inline]
    pub(crate) fn local(&self, x: f64, problem: &SdeProblem) -> Local {
        let drift = problem.drift(x);
        let sigma = problem.diffusion(x);
        let scale = growth_scale(x, drift, sigma, problem.l);
        let dist = problem.dist_to_xi(x);
        Local {
            drift,
            sigma_tamed: tame(sigma, self.delta),
            step: self.formula(self.classify(dist), dist, scale),
        }
    }
}

/// Evaluates one branch formula at `x` with a caller-supplied distance,
/// regardless of which branch `x` actually falls in.
pub fn branch_step(
    branch: StepBranch,
    x: f64,
    dist: f64,
    config: &SchemeConfig,
    problem: &SdeProblem,
) -> f64 {
    let scale = growth_scale(x, problem.drift(x), problem.diffusion(x), problem.l);
    StepRule::new(config).formula(branch, dist, scale)
}

/// `h_Δ(x)`. Always positive; an empty Ξ always selects [`StepBranch::Far`].
pub fn step_size(x: f64, config: &SchemeConfig, problem: &SdeProblem) -> f64 {
    StepRule::new(config).local(x, problem).step
}

pub fn step_branch(x: f64, config: &SchemeConfig, problem: &SdeProblem) -> StepBranch {
    classify(problem.dist_to_xi(x), config)
}

/// Everything the integrator needs at one grid point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Local {
    pub drift: f64,
    pub sigma_tamed: f64,
    pub step: f64,
}

/// The Euler update shared by the standalone and coupled integrators.
#[inline]
pub(crate) fn euler_update(y: f64, drift: f64, sigma_tamed: f64, dt: f64, dw: f64) -> f64 {
    y + drift * dt + sigma_tamed * dw
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub delta: f64,
    pub log_base: LogBase,
    /// `None` when Ξ is empty.
    pub eps0: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
    /// `ε₂ < ε₁`.
    pub ordered: bool,
    /// `ε₁ < ε₀ / 2`, vacuously true for empty Ξ.
    pub separated: bool,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.ordered && self.separated
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.ordered {
            out.push(format!(
                "delta = {}: eps2 = {} is not below eps1 = {} ({} log)",
                self.delta, self.eps2, self.eps1, self.log_base
            ));
        }
        if !self.separated {
            out.push(format!(
                "delta = {}: eps1 = {} is not below eps0/2 = {} ({} log)",
                self.delta,
                self.eps1,
                self.eps0.unwrap_or(f64::NAN) / 2.0,
                self.log_base
            ));
        }
        out
    }
}

/// Checks `Δ log⁴(1/Δ) < √Δ log²(1/Δ) < ε₀/2` at the configured Δ.
pub fn validate_delta(config: &SchemeConfig, problem: &SdeProblem) -> ValidityReport {
    let eps1 = config.eps1();
    let eps2 = config.eps2();
    let eps0 = problem.epsilon0().ok();
    ValidityReport {
        delta: config.delta,
        log_base: config.log_base,
        eps0,
        eps1,
        eps2,
        ordered: eps2 < eps1,
        separated: eps0.is_none_or(|e0| eps1 < 0.5 * e0),
    }
}

/// One step of a path: from `(t, y)` over `dt` with Brownian increment `dw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub t: f64,
    pub y: f64,
    pub drift: f64,
    pub sigma_tamed: f64,
    /// Increment length; shorter than `h_Δ(y)` only for the final step.
    pub dt: f64,
    pub dw: f64,
    pub y_next: f64,
    pub last: bool,
}

impl Step {
    /// Value of the continuous-time scheme at `t + s`, `0 ≤ s ≤ dt`, given
    /// an independent standard normal for the Brownian bridge.
    pub fn value_at(&self, s: f64, bridge_normal: f64) -> f64 {
        if s <= 0.0 {
            return self.y;
        }
        if s >= self.dt {
            return self.y_next;
        }
        let w = s / self.dt * self.dw + (s * (self.dt - s) / self.dt).sqrt() * bridge_normal;
        euler_update(self.y, self.drift, self.sigma_tamed, s, w)
    }
}

/// Grid points of a recorded path: every step start plus the terminal value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// `(t, Y_t)` at the grid points and at `T`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.steps.iter().map(|s| (s.t, s.y)).collect();
        if let Some(last) = self.steps.last() {
            pts.push((last.t + last.dt, last.y_next));
        }
        pts
    }

    /// Reconstructs `Y_t` inside the recorded horizon.
    pub fn value_at(&self, t: f64, bridge_normal: f64) -> Option<f64> {
        let idx = self.steps.partition_point(|s| s.t <= t);
        let step = self.steps.get(idx.checked_sub(1)?)?;
        if t > step.t + step.dt {
            return None;
        }
        Some(step.value_at(t - step.t, bridge_normal))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,y")?;
        for (t, y) in self.points() {
            writeln!(out, "{t},{y}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathOutcome {
    pub y_end: f64,
    /// `1 + #{k ≥ 1 : t_k < T}`.
    pub n_steps: u64,
    pub trajectory: Option<Trajectory>,
}

/// Drives one path to `config.t_end`, handing each step to `visit`.
pub fn walk<B, F>(
    problem: &SdeProblem,
    config: &SchemeConfig,
    noise: &mut B,
    mut visit: F,
) -> Result<(f64, u64)>
where
    B: BrownianIncrements + ?Sized,
    F: FnMut(&Step),
{
    config.check()?;
    let horizon = config.t_end;
    let mut t = 0.0;
    let mut y = problem.x0;
    let mut n_steps = 0u64;
    let rule = StepRule::new(config);
    loop {
        if n_steps >= config.max_steps {
            return Err(Error::StepCapExceeded {
                max_steps: config.max_steps,
                t,
                y,
                delta: config.delta,
            });
        }
        n_steps += 1;
        let c = rule.local(y, problem);
        let t_next = t + c.step;
        if !(t_next > t) {
            return Err(Error::StepUnderflow { t, step: c.step });
        }
        let last = !(t_next < horizon);
        let dt = if last { horizon - t } else { c.step };
        let dw = noise.increment(dt);
        let y_next = euler_update(y, c.drift, c.sigma_tamed, dt, dw);
        if !y_next.is_finite() {
            return Err(Error::NonFinite {
                t,
                delta: config.delta,
            });
        }
        visit(&Step {
            t,
            y,
            drift: c.drift,
            sigma_tamed: c.sigma_tamed,
            dt,
            dw,
            y_next,
            last,
        });
        if last {
            return Ok((y_next, n_steps));
        }
        t = t_next;
        y = y_next;
    }
}

pub fn simulate_path<B>(
    problem: &SdeProblem,
    config: &SchemeConfig,
    noise: &mut B,
) -> Result<PathOutcome>
where
    B: BrownianIncrements + ?Sized,
{
    let mut steps = Vec::new();
    let record = config.record_trajectory;
    let (y_end, n_steps) = walk(problem, config, noise, |s| {
        if record {
            steps.push(*s)
        }
    })?;
    Ok(PathOutcome {
        y_end,
        n_steps,
        trajectory: record.then_some(Trajectory { steps }),
    })
}

/// Summary of `n_paths` independent paths from `(master_seed, path index)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub y_end: SampleSummary,
    pub n_steps: SampleSummary,
}

pub fn simulate_ensemble(
    problem: &SdeProblem,
    config: &SchemeConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<EnsembleSummary> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("need at least one path".into()));
    }
    let config = config.clone().recording(false);
    let outcomes = run_samples(n_paths, |i| {
        let mut noise = SeededNormals::new(master_seed, Domain::Paths, 0, i);
        simulate_path(problem, &config, &mut noise)
    })?;
    let ends: Vec<f64> = outcomes.iter().map(|o| o.y_end).collect();
    let steps: Vec<f64> = outcomes.iter().map(|o| o.n_steps as f64).collect();
    Ok(EnsembleSummary {
        y_end: SampleSummary::from_values(&ends),
        n_steps: SampleSummary::from_values(&steps),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub order: u32,
    pub times: Vec<f64>,
    pub estimates: Vec<SampleSummary>,
}

/// Monte Carlo estimate of `E|Y_t|^order` at each requested time. Values
/// inside a step are drawn from the Brownian bridge of that step.
pub fn empirical_moment(
    problem: &SdeProblem,
    config: &SchemeConfig,
    order: u32,
    n_paths: usize,
    times: &[f64],
    master_seed: u64,
) -> Result<MomentEstimate> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "moment order must be a positive even integer, got {order}"
        )));
    }
    if (order / 2) as f64 > (problem.p0 / 2.0).floor() {
        return Err(Error::InvalidConfig(format!(
            "moment order {order} exceeds 2[p0/2] for p0 = {}",
            problem.p0
        )));
    }
    if n_paths == 0 || times.is_empty() {
        return Err(Error::InvalidConfig(
            "need paths and observation times".into(),
        ));
    }
    if times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidConfig(
            "observation times must be finite and >= 0".into(),
        ));
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let per_path = run_samples(n_paths, |i| {
        let mut values = vec![problem.x0; times.len()];
        if horizon == 0.0 {
            return Ok(values);
        }
        let config = config.at_horizon(horizon)?.recording(false);
        let mut noise = SeededNormals::new(master_seed, Domain::Moments, 0, i);
        let mut bridge = SeededNormals::new(master_seed, Domain::Moments, 1, i);
        walk(problem, &config, &mut noise, |s| {
            let end = s.t + s.dt;
            for (slot, &t) in values.iter_mut().zip(times) {
                if t > s.t && (t <= end || s.last) {
                    *slot = if t >= end {
                        s.y_next
                    } else {
                        s.value_at(t - s.t, bridge.next_normal())
                    };
                }
            }
        })?;
        Ok(values)
    })?;
    let estimates = (0..times.len())
        .map(|j| {
            let v: Vec<f64> = per_path
                .iter()
                .map(|p| p[j].abs().powi(order as i32))
                .collect();
            SampleSummary::from_values(&v)
        })
        .collect();
    Ok(MomentEstimate {
        order,
        times: times.to_vec(),
        estimates,
    })
}

/// One path's in-flight gap at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSample {
    /// `|Y_T − Y_{t̲}|` with `t̲` the last grid point before `T`.
    pub gap: f64,
    pub last_grid_value: f64,
    /// `T − t̲`.
    pub last_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    pub summary: SampleSummary,
    pub samples: Vec<GapSample>,
}

/// Estimates `E|Y_T − Ȳ_T|`, the distance between the scheme at `T` and its
/// value at the last grid point.
pub fn increment_gap(
    problem: &SdeProblem,
    config: &SchemeConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<GapEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("need at least one path".into()));
    }
    let config = config.clone().recording(false);
    let samples = run_samples(n_paths, |i| {
        let mut noise = SeededNormals::new(master_seed, Domain::Gap, 0, i);
        let mut last = None;
        walk(problem, &config, &mut noise, |s| {
            if s.last {
                last = Some(*s)
            }
        })?;
        let s = last.expect("walk always ends with a final step");
        Ok(GapSample {
            gap: (s.y_next - s.y).abs(),
            last_grid_value: s.y,
            last_dt: s.dt,
        })
    })?;
    let gaps: Vec<f64> = samples.iter().map(|s| s.gap).collect();
    Ok(GapEstimate {
        summary: SampleSummary::from_values(&gaps),
        samples,
    })
}
