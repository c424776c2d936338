//! Scalar SDE problems `dX = b(X) dt + σ(X) dW` with a piecewise-continuous
//! drift, plus the four built-in benchmark problems `ex1`..`ex4`.
//!
//! A problem carries its coefficient functions, the drift discontinuity set Ξ
//! and the growth/dissipativity constants the convergence theory is stated in.
//! The constants are metadata: the integrator only uses `l` and Ξ.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// A pure coefficient function. Shared across worker threads.
pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Half-width of the window used to certify `eta` for built-ins.
pub const ETA_WINDOW: f64 = 50.0;
const ETA_GRID_POINTS: usize = 200_001;
const NU_GRID_POINTS: usize = 4_001;

pub const BUILTIN_NAMES: [&str; 4] = ["ex1", "ex2", "ex3", "ex4"];

#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    drift: Coefficient,
    diffusion: Coefficient,
    /// Drift discontinuity points, strictly increasing.
    pub xi: Vec<f64>,
    pub x0: f64,
    /// Drift local-growth exponent.
    pub l: f64,
    /// Diffusion growth exponent.
    pub m: f64,
    /// Hölder exponent of σ minus one half.
    pub alpha: f64,
    pub p0: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Global one-sided Lipschitz constant, when tabulated as such.
    pub one_sided_lipschitz: Option<f64>,
    /// Constant tabulated under the `L2` header (outer-region constant).
    pub outer_lipschitz: Option<f64>,
    /// Radius around each ξᵢ on which σ ≥ `nu`.
    pub mu: f64,
    pub nu: f64,
    pub notes: Vec<String>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("xi", &self.xi)
            .field("x0", &self.x0)
            .field("l", &self.l)
            .field("m", &self.m)
            .field("alpha", &self.alpha)
            .field("p0", &self.p0)
            .field("gamma", &self.gamma)
            .field("eta", &self.eta)
            .field("mu", &self.mu)
            .field("nu", &self.nu)
            .finish_non_exhaustive()
    }
}

impl SdeProblem {
    pub fn builder<B, S>(name: impl Into<String>, drift: B, diffusion: S) -> ProblemBuilder
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ProblemBuilder {
            name: name.into(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            xi: Vec::new(),
            x0: 0.0,
            l: 1.0,
            m: 0.0,
            alpha: 0.5,
            p0: 2.0,
            gamma: 0.0,
            eta: None,
            one_sided_lipschitz: None,
            outer_lipschitz: None,
            mu: None,
            nu: None,
            notes: Vec::new(),
        }
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    /// Distance from `x` to the discontinuity set; `+∞` when Ξ is empty.
    pub fn dist_to_xi(&self, x: f64) -> f64 {
        dist_to_set(x, &self.xi)
    }

    /// `μ ∧ min_i (ξ_{i+1} − ξ_i)`.
    pub fn epsilon0(&self) -> Result<f64> {
        if self.xi.is_empty() {
            return Err(Error::EmptyDiscontinuitySet);
        }
        Ok(self
            .xi
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(self.mu, f64::min))
    }

    /// `[p0/2] ≥ (l+1) ∨ (1+2α+2m)`, the moment hypothesis of the L¹ rate.
    pub fn meets_rate_hypothesis(&self) -> bool {
        let k = (self.p0 / 2.0).floor();
        k >= self.l + 1.0 && k >= 1.0 + 2.0 * self.alpha + 2.0 * self.m
    }

    /// Expected L¹ convergence order of the scheme (α; the α = 0 case is
    /// logarithmic and reported as 0).
    pub fn theoretical_rate(&self) -> f64 {
        self.alpha
    }

    /// Exponent ζ in `E[N_T] ≤ C T Δ^ζ`.
    pub fn theoretical_cost_exponent(&self) -> f64 {
        let k = (self.p0 / 2.0).floor();
        let threshold = 3.0 * (1.0 + 2.0 * self.alpha + 2.0 * self.m) / (1.0 + 2.0 * self.alpha);
        if k > threshold {
            -1.0
        } else {
            self.alpha / 2.0 - 1.75
        }
    }

    /// Left-hand side minus right-hand side of the dissipativity condition
    /// `x b(x) + (p0−1)/2 σ(x)² ≤ γ x² + η`; nonpositive when it holds at `x`.
    pub fn dissipativity_excess(&self, x: f64) -> f64 {
        let s = self.diffusion(x);
        x * self.drift(x) + 0.5 * (self.p0 - 1.0) * s * s - self.gamma * x * x - self.eta
    }

    pub fn describe(&self) -> ProblemDescription {
        ProblemDescription {
            name: self.name.clone(),
            x0: self.x0,
            xi: self.xi.clone(),
            l: self.l,
            m: self.m,
            alpha: self.alpha,
            p0: self.p0,
            gamma: self.gamma,
            eta: self.eta,
            one_sided_lipschitz: self.one_sided_lipschitz,
            outer_lipschitz: self.outer_lipschitz,
            mu: self.mu,
            nu: if self.nu.is_finite() {
                Some(self.nu)
            } else {
                None
            },
            notes: self.notes.clone(),
        }
    }
}

/// Problem metadata for provenance records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemDescription {
    pub name: String,
    pub x0: f64,
    pub xi: Vec<f64>,
    pub l: f64,
    pub m: f64,
    pub alpha: f64,
    pub p0: f64,
    pub gamma: f64,
    pub eta: f64,
    pub one_sided_lipschitz: Option<f64>,
    pub outer_lipschitz: Option<f64>,
    pub mu: f64,
    pub nu: Option<f64>,
    pub notes: Vec<String>,
}

pub(crate) fn dist_to_set(x: f64, set: &[f64]) -> f64 {
    set.iter()
        .map(|&s| (x - s).abs())
        .fold(f64::INFINITY, f64::min)
}

pub struct ProblemBuilder {
    name: String,
    drift: Coefficient,
    diffusion: Coefficient,
    xi: Vec<f64>,
    x0: f64,
    l: f64,
    m: f64,
    alpha: f64,
    p0: f64,
    gamma: f64,
    eta: Option<f64>,
    one_sided_lipschitz: Option<f64>,
    outer_lipschitz: Option<f64>,
    mu: Option<f64>,
    nu: Option<f64>,
    notes: Vec<String>,
}

impl ProblemBuilder {
    pub fn x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn xi(mut self, xi: Vec<f64>) -> Self {
        self.xi = xi;
        self
    }

    pub fn growth(mut self, l: f64, m: f64, alpha: f64) -> Self {
        self.l = l;
        self.m = m;
        self.alpha = alpha;
        self
    }

    pub fn p0(mut self, p0: f64) -> Self {
        self.p0 = p0;
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Caller-asserted η. When absent, `build` certifies one on a grid.
    pub fn eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn one_sided_lipschitz(mut self, value: f64) -> Self {
        self.one_sided_lipschitz = Some(value);
        self
    }

    pub fn outer_lipschitz(mut self, value: f64) -> Self {
        self.outer_lipschitz = Some(value);
        self
    }

    pub fn mu_nu(mut self, mu: f64, nu: f64) -> Self {
        self.mu = Some(mu);
        self.nu = Some(nu);
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn build(self) -> Result<SdeProblem> {
        let invalid = |msg: String| Err(Error::InvalidProblem(msg));
        if self.xi.iter().any(|v| !v.is_finite()) {
            return invalid("discontinuity points must be finite".into());
        }
        if self.xi.windows(2).any(|w| w[1] <= w[0]) {
            return invalid(format!("xi must be strictly increasing, got {:?}", self.xi));
        }
        if !self.x0.is_finite() {
            return invalid("x0 must be finite".into());
        }
        if self.l < 1.0 {
            return invalid(format!("l must be >= 1, got {}", self.l));
        }
        if self.m < 0.0 {
            return invalid(format!("m must be >= 0, got {}", self.m));
        }
        if !(0.0..=0.5).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1/2], got {}", self.alpha));
        }
        if self.p0 < 2.0 {
            return invalid(format!("p0 must be >= 2, got {}", self.p0));
        }

        let min_gap = self
            .xi
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let mu = match self.mu {
            Some(mu) => mu,
            None if min_gap.is_finite() => 0.5 * min_gap,
            None => 0.5,
        };
        if !(mu > 0.0) {
            return invalid(format!("mu must be positive, got {mu}"));
        }
        if self.xi.len() >= 2 && mu > min_gap {
            return invalid(format!("mu = {mu} exceeds the smallest xi gap {min_gap}"));
        }
        let sampled_nu = min_sigma_near(&*self.diffusion, &self.xi, mu);
        let nu = match self.nu {
            Some(nu) => {
                if !(nu > 0.0) {
                    return invalid(format!("nu must be positive, got {nu}"));
                }
                if sampled_nu < nu {
                    return invalid(format!(
                        "sigma drops to {sampled_nu} < nu = {nu} within mu of a discontinuity"
                    ));
                }
                nu
            }
            None => sampled_nu,
        };
        if !(nu > 0.0) {
            return invalid(format!(
                "sigma is not bounded away from zero near the discontinuity set (min {nu})"
            ));
        }

        let mut problem = SdeProblem {
            name: self.name,
            drift: self.drift,
            diffusion: self.diffusion,
            xi: self.xi,
            x0: self.x0,
            l: self.l,
            m: self.m,
            alpha: self.alpha,
            p0: self.p0,
            gamma: self.gamma,
            eta: 0.0,
            one_sided_lipschitz: self.one_sided_lipschitz,
            outer_lipschitz: self.outer_lipschitz,
            mu,
            nu,
            notes: self.notes,
        };
        problem.eta = match self.eta {
            Some(eta) => eta,
            None => certify_eta(&problem, ETA_WINDOW),
        };
        Ok(problem)
    }
}

/// Grid minimum of σ over the μ-balls around each ξᵢ (`+∞` for empty Ξ).
fn min_sigma_near(diffusion: &(dyn Fn(f64) -> f64 + Send + Sync), xi: &[f64], mu: f64) -> f64 {
    let n = NU_GRID_POINTS;
    xi.iter()
        .flat_map(|&c| (0..n).map(move |i| c - mu + 2.0 * mu * i as f64 / (n - 1) as f64))
        .map(diffusion)
        .fold(f64::INFINITY, f64::min)
}

/// Upper bound of `x b(x) + (p0−1)/2 σ² − γ x²` over a grid on
/// `[-window, window]` that also contains Ξ and its one-sided neighbours.
pub fn certify_eta(problem: &SdeProblem, window: f64) -> f64 {
    let n = ETA_GRID_POINTS;
    let grid = (0..n).map(|i| -window + 2.0 * window * i as f64 / (n - 1) as f64);
    let near_xi = problem.xi.iter().flat_map(|&c| [c, c - 1e-12, c + 1e-12]);
    let max = grid
        .chain(near_xi)
        .map(|x| {
            let s = problem.diffusion(x);
            x * problem.drift(x) + 0.5 * (problem.p0 - 1.0) * s * s - problem.gamma * x * x
        })
        .fold(f64::NEG_INFINITY, f64::max);
    max + 1e-9 * (1.0 + max.abs())
}

/// `|x|^{2/3}` written as the real cube root of `x²`.
#[inline]
fn abs_pow_two_thirds(x: f64) -> f64 {
    (x * x).cbrt()
}

fn ex1() -> SdeProblem {
    SdeProblem::builder(
        "ex1",
        |x: f64| {
            if x >= 0.0 {
                -x - x * x * x
            } else {
                1.0 - x - x * x * x
            }
        },
        |x: f64| {
            if x >= -1.0 {
                (1.0 + x) * (1.0 + abs_pow_two_thirds(x))
            } else {
                0.0
            }
        },
    )
    .x0(0.0)
    .xi(vec![0.0])
    .growth(2.0, 1.0, 1.0 / 6.0)
    .p0(20.0)
    .gamma(-1.0)
    .one_sided_lipschitz(-1.0)
    .note("drift jumps at 0; xi = {0}")
    .note("x^{2/3} evaluated as cbrt(x^2) on [-1, 0)")
    .build()
    .expect("ex1 is well formed")
}

fn ex2() -> SdeProblem {
    SdeProblem::builder(
        "ex2",
        |x: f64| {
            if x >= 0.0 {
                -1.0 + x - x * x * x
            } else {
                x - x * x * x
            }
        },
        |x: f64| {
            if x >= -1.0 {
                (1.0 + x) * (1.0 + abs_pow_two_thirds(x))
            } else {
                0.0
            }
        },
    )
    .x0(0.0)
    .xi(vec![0.0])
    .growth(2.0, 1.0, 1.0 / 6.0)
    .p0(20.0)
    .gamma(1.0)
    .one_sided_lipschitz(1.0)
    .note("drift jumps at 0; xi = {0}")
    .note("x^{2/3} evaluated as cbrt(x^2) on [-1, 0)")
    .build()
    .expect("ex2 is well formed")
}

fn ex3() -> SdeProblem {
    SdeProblem::builder(
        "ex3",
        |x: f64| {
            if x > 2.0 {
                1.0 + x - x * x * x
            } else if x >= 0.0 {
                x * x + 1.0
            } else {
                x - x * x * x
            }
        },
        |x: f64| {
            let x4 = x * x * x * x;
            1.0 + ((x4 + x4.cbrt()) / 14.0).sqrt()
        },
    )
    .x0(0.2)
    .xi(vec![0.0, 2.0])
    .growth(2.0, 1.0, 1.0 / 6.0)
    .p0(26.0)
    .gamma(-1.0)
    .outer_lipschitz(-1.0)
    .note("drift jumps at 0 and 2; xi = {0, 2}")
    .note("x^{4/3} evaluated as cbrt(x^4)")
    .build()
    .expect("ex3 is well formed")
}

fn ex4() -> SdeProblem {
    SdeProblem::builder(
        "ex4",
        |x: f64| {
            if x > 2.0 {
                1.0 + x - abs_pow_two_thirds(x)
            } else if x >= 0.0 {
                x * x + 1.0
            } else {
                x
            }
        },
        |x: f64| 1.0 + abs_pow_two_thirds(x),
    )
    .x0(0.0)
    .xi(vec![0.0, 2.0])
    .growth(1.0, 4.0 / 3.0, 1.0 / 6.0)
    .p0(20.0)
    .gamma(1.0)
    .outer_lipschitz(1.0)
    .note("drift jumps at 0 and 2; xi = {0, 2}")
    .note("x^{2/3} evaluated as cbrt(x^2) for all real x")
    .note("eta certified on [-50, 50] only: the dissipativity excess is unbounded as x -> -inf")
    .build()
    .expect("ex4 is well formed")
}

/// Look up a built-in problem by name.
pub fn get_problem(name: &str) -> Result<SdeProblem> {
    match name {
        "ex1" => Ok(ex1()),
        "ex2" => Ok(ex2()),
        "ex3" => Ok(ex3()),
        "ex4" => Ok(ex4()),
        _ => Err(Error::UnknownProblem {
            name: name.to_string(),
            available: BUILTIN_NAMES.join(", "),
        }),
    }
}

/// All built-ins, in name order.
pub fn builtins() -> Vec<SdeProblem> {
    BUILTIN_NAMES
        .iter()
        .map(|n| get_problem(n).expect("built-in"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_xi(xi: Vec<f64>, mu: f64) -> SdeProblem {
        SdeProblem::builder("t", |_| 0.0, |_| 1.0)
            .xi(xi)
            .mu_nu(mu, 1.0)
            .eta(0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn registry_constants() {
        let p = get_problem("ex1").unwrap();
        assert_eq!(p.x0, 0.0);
        assert_eq!(p.alpha, 1.0 / 6.0);
        assert_eq!(p.gamma, -1.0);
        assert_eq!(p.p0, 20.0);
        assert_eq!(p.l, 2.0);
        assert_eq!(p.m, 1.0);
        assert_eq!(p.one_sided_lipschitz, Some(-1.0));
        assert_eq!(p.xi, vec![0.0]);

        let p = get_problem("ex4").unwrap();
        assert_eq!(p.m, 4.0 / 3.0);
        assert_eq!(p.l, 1.0);
        assert_eq!(p.p0, 20.0);
        assert_eq!(p.xi, vec![0.0, 2.0]);
        assert_eq!(p.outer_lipschitz, Some(1.0));

        let p = get_problem("ex3").unwrap();
        assert_eq!(p.x0, 0.2);
        assert_eq!(p.p0, 26.0);
    }

    #[test]
    fn unknown_name_lists_available() {
        let err = get_problem("nope").unwrap_err();
        match &err {
            Error::UnknownProblem { available, .. } => {
                assert_eq!(available, "ex1, ex2, ex3, ex4")
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn coefficients_match_tables() {
        let p = get_problem("ex1").unwrap();
        assert_eq!(p.drift(1.0), -2.0);
        assert_eq!(p.drift(-1.0), 3.0);
        assert_eq!(p.diffusion(1.0), 4.0);
        assert_eq!(p.diffusion(-2.0), 0.0);
        assert_eq!(p.diffusion(0.0), 1.0);
        // (1 - 0.125)(1 + 0.25)
        assert!((p.diffusion(-0.125) - 0.875 * 1.25).abs() < 1e-15);

        let p = get_problem("ex3").unwrap();
        assert_eq!(p.drift(0.0), 1.0);
        assert_eq!(p.drift(2.0), 5.0);
        assert_eq!(p.drift(3.0), 1.0 + 3.0 - 27.0);
        assert_eq!(p.drift(-2.0), 6.0);

        let p = get_problem("ex4").unwrap();
        assert!((p.diffusion(-8.0) - 5.0).abs() < 1e-14);
        assert!((p.drift(8.0) - 5.0).abs() < 1e-14);
        assert_eq!(p.drift(-3.0), -3.0);
    }

    #[test]
    fn dist_to_xi_examples() {
        let p = with_xi(vec![0.0, 2.0], 1.0);
        assert!((p.dist_to_xi(0.3) - 0.3).abs() < 1e-15);
        assert_eq!(p.dist_to_xi(0.0), 0.0);
        assert_eq!(p.dist_to_xi(2.0), 0.0);
        assert!((p.dist_to_xi(1.7) - 0.3).abs() < 1e-15);
        let empty = with_xi(vec![], 0.5);
        assert_eq!(empty.dist_to_xi(3.0), f64::INFINITY);
    }

    #[test]
    fn epsilon0_examples() {
        assert_eq!(with_xi(vec![0.0], 0.5).epsilon0().unwrap(), 0.5);
        assert_eq!(with_xi(vec![0.0, 0.4], 0.4).epsilon0().unwrap(), 0.4);
        assert_eq!(with_xi(vec![0.0, 0.4], 0.1).epsilon0().unwrap(), 0.1);
        assert_eq!(
            with_xi(vec![], 0.5).epsilon0().unwrap_err(),
            Error::EmptyDiscontinuitySet
        );
    }

    #[test]
    fn builder_rejects_bad_input() {
        let b = || SdeProblem::builder("bad", |_| 0.0, |_| 1.0).eta(0.0);
        assert!(b().xi(vec![1.0, 0.0]).build().is_err());
        assert!(b().xi(vec![0.0, 0.0]).build().is_err());
        assert!(b().growth(0.5, 0.0, 0.1).build().is_err());
        assert!(b().growth(1.0, 0.0, 0.7).build().is_err());
        assert!(b().p0(1.0).build().is_err());
        assert!(b().xi(vec![0.0, 0.4]).mu_nu(0.5, 1.0).build().is_err());
        // nu larger than sigma near the discontinuity
        assert!(b().xi(vec![0.0]).mu_nu(0.5, 2.0).build().is_err());
        // sigma vanishes at the discontinuity
        let zero = SdeProblem::builder("z", |_| 0.0, |x: f64| x)
            .xi(vec![0.0])
            .eta(0.0);
        assert!(zero.build().is_err());
    }

    #[test]
    fn default_mu_nu() {
        let p = get_problem("ex1").unwrap();
        assert_eq!(p.mu, 0.5);
        // sigma on [-0.5, 0.5] is smallest at -0.5
        let expect = 0.5 * (1.0 + 0.25f64.cbrt());
        assert!((p.nu - expect).abs() < 1e-12, "{}", p.nu);
        let p = get_problem("ex3").unwrap();
        assert_eq!(p.mu, 1.0);
        assert!((p.nu - 1.0).abs() < 1e-12);
        for p in builtins() {
            assert!(p.nu > 0.0);
            for &c in &p.xi {
                assert!(p.diffusion(c) > 0.0, "{} at {c}", p.name);
            }
        }
    }

    #[test]
    fn dissipativity_on_grid() {
        for p in builtins() {
            let n = 10_001;
            for i in 0..n {
                let x = -5.0 + 10.0 * i as f64 / (n - 1) as f64;
                if x == 0.0 {
                    continue;
                }
                assert!(p.dissipativity_excess(x) <= 0.0, "{} at {x}", p.name);
            }
        }
    }

    #[test]
    fn one_sided_lipschitz_ex1_ex2() {
        for name in ["ex1", "ex2"] {
            let p = get_problem(name).unwrap();
            let l1 = p.one_sided_lipschitz.unwrap();
            let xs: Vec<f64> = (0..401).map(|i| -4.0 + 0.02 * i as f64 + 0.001).collect();
            for &x in &xs {
                for &y in &xs {
                    let lhs = (x - y) * (p.drift(x) - p.drift(y));
                    assert!(lhs <= l1 * (x - y) * (x - y) + 1e-9, "{name} {x} {y}");
                }
            }
        }
    }

    #[test]
    fn hypotheses_and_cost_regime() {
        for p in builtins() {
            assert!(p.meets_rate_hypothesis(), "{}", p.name);
            assert_eq!(p.theoretical_cost_exponent(), -1.0, "{}", p.name);
        }
        let p = SdeProblem::builder("lowp", |_| 0.0, |_| 1.0)
            .growth(1.0, 1.0, 0.0)
            .p0(8.0)
            .eta(0.0)
            .build()
            .unwrap();
        assert_eq!(p.theoretical_cost_exponent(), -1.75);
    }

    #[test]
    fn describe_serializes() {
        let d = get_problem("ex3").unwrap().describe();
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["name"], "ex3");
        assert_eq!(v["xi"], serde_json::json!([0.0, 2.0]));
        assert_eq!(v["x0"], 0.2);
        assert!(v["eta"].as_f64().unwrap().is_finite());
    }
}
