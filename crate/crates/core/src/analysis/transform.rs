//! The drift-control transform `φ` and the transformed drift `Ψ`.
//!
//! On the working interval `[ξ₀, ξ_{k+1}]`, with `g = 2b/σ²`,
//! `A(x) = ∫_{ξ₀}^x g` and `R` the chord of `b` between the endpoints,
//!
//! ```text
//! φ'(x) = e^{−A(x)} (∫_{ξ₀}^x e^{A(t)} 2R(t)/σ²(t) dt + K)
//! ```
//!
//! and `φ(ξ₀) = b(ξ₀)`. Outside, `φ` continues either affinely or with an
//! exponentially relaxing slope, depending on the sign pattern of `b`.
//!
//! Cumulative integrals are stored at grid nodes; every evaluation integrates
//! from the nearest node to the left, so values between nodes are exact up to
//! quadrature tolerance rather than interpolated.

use serde::Serialize;

use super::yw::PropertyCheck;
use crate::error::{Error, Result};
use crate::problems::SdeProblem;
use crate::quad::{integrate, integrate_with_breaks};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    /// Nodes on the working interval (and on each exponential outer table).
    pub grid_resolution: usize,
    pub quad_tolerance: f64,
    /// Extent of the checked region beyond `ξ₀` and `ξ_{k+1}`.
    pub span: f64,
    /// How far the sign search looks beyond `ξ₁` and `ξ_k`.
    pub search_window: f64,
    /// Smallest σ accepted on the checked region.
    pub min_sigma: f64,
    /// Points closer than this to Ξ are excluded from the P4 residual.
    pub p4_clearance: f64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            grid_resolution: 4096,
            quad_tolerance: 1e-10,
            span: 2.0,
            search_window: 50.0,
            min_sigma: 1e-8,
            p4_clearance: 1e-2,
        }
    }
}

pub const P2_TOLERANCE: f64 = 1e-9;
pub const P4_TOLERANCE: f64 = 1e-6;
pub const JUNCTION_TOLERANCE: f64 = 1e-8;

const SIGN_GRID_STEP: f64 = 0.01;
const JUNCTION_OFFSET: f64 = 1e-6;
const LIPSCHITZ_STRIDE: usize = 16;

/// Cumulative values at increasing nodes. `a` is `∫ g` from the region
/// anchor, `i` the inner integral (interior only) and `phi` is `φ`.
#[derive(Debug, Clone)]
struct Table {
    xs: Vec<f64>,
    a: Vec<f64>,
    i: Vec<f64>,
    phi: Vec<f64>,
}

impl Table {
    fn anchor(&self, x: f64) -> usize {
        self.xs.partition_point(|&v| v <= x).saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Left,
    Inner,
    Right,
}

#[derive(Debug, Clone)]
pub struct TransformArtifacts {
    problem: SdeProblem,
    options: TransformOptions,
    pub xi0: f64,
    pub xi_k1: f64,
    /// `b ≥ 0` beyond the last discontinuity.
    pub pb1_holds: bool,
    /// `b ≤ 0` before the first discontinuity.
    pub pb2_holds: bool,
    pub k_const: f64,
    pub k_lower_bound: f64,
    pub h_bound: f64,
    pub l_psi: f64,
    pub l_psi_used: f64,
    inner: Table,
    left: Option<Table>,
    right: Option<Table>,
    dphi_xi0: f64,
    dphi_xik1: f64,
    phi_xik1: f64,
}

fn evenly(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|j| {
            if j == n - 1 {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn nan_on_err(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

/// Returns `(ξ_{k+1}, P_b1 holds)`.
fn search_right(problem: &SdeProblem, xi_k: f64, window: f64) -> Result<(f64, bool)> {
    let steps = (window / SIGN_GRID_STEP).round() as usize;
    let holds = (1..=steps).all(|j| problem.drift(xi_k + j as f64 * SIGN_GRID_STEP) >= 0.0);
    if holds {
        return Ok((xi_k + 1.0, true));
    }
    (1..=window.floor() as usize)
        .map(|n| xi_k + n as f64)
        .find(|&x| problem.drift(x) < 0.0)
        .map(|x| (x, false))
        .ok_or_else(|| {
            Error::SignSearch(format!(
                "b changes sign right of {xi_k} but is never negative at unit steps within {window}"
            ))
        })
}

/// Returns `(ξ₀, P_b2 holds)`.
fn search_left(problem: &SdeProblem, xi_1: f64, window: f64) -> Result<(f64, bool)> {
    let steps = (window / SIGN_GRID_STEP).round() as usize;
    let holds = (1..=steps).all(|j| problem.drift(xi_1 - j as f64 * SIGN_GRID_STEP) <= 0.0);
    if holds {
        return Ok((xi_1 - 1.0, true));
    }
    (1..=window.floor() as usize)
        .map(|n| xi_1 - n as f64)
        .find(|&x| problem.drift(x) > 0.0)
        .map(|x| (x, false))
        .ok_or_else(|| {
            Error::SignSearch(format!(
                "b changes sign left of {xi_1} but is never positive at unit steps within {window}"
            ))
        })
}

/// Builds the transform for a problem with a non-empty discontinuity set.
pub fn build_transform(
    problem: &SdeProblem,
    options: TransformOptions,
) -> Result<TransformArtifacts> {
    if options.grid_resolution < 8 || !(options.quad_tolerance > 0.0) || !(options.span > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "bad transform options {options:?}"
        )));
    }
    let (xi_1, xi_k) = match (problem.xi.first(), problem.xi.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptyDiscontinuitySet),
    };
    let (xi0, pb2_holds) = search_left(problem, xi_1, options.search_window)?;
    let (xi_k1, pb1_holds) = search_right(problem, xi_k, options.search_window)?;

    let lo = xi0 - options.span;
    let hi = xi_k1 + options.span;
    let checked = evenly(lo, hi, 4 * options.grid_resolution);
    let (min_sigma, at) = checked.iter().map(|&x| (problem.diffusion(x), x)).fold(
        (f64::INFINITY, f64::NAN),
        |m, v| if v.0 < m.0 { v } else { m },
    );
    if !(min_sigma >= options.min_sigma) {
        return Err(Error::PositivityViolation { min_sigma, at });
    }

    let mut t = TransformArtifacts {
        problem: problem.clone(),
        options,
        xi0,
        xi_k1,
        pb1_holds,
        pb2_holds,
        k_const: f64::NAN,
        k_lower_bound: f64::NAN,
        h_bound: f64::NAN,
        l_psi: f64::NAN,
        l_psi_used: f64::NAN,
        inner: Table {
            xs: Vec::new(),
            a: Vec::new(),
            i: Vec::new(),
            phi: Vec::new(),
        },
        left: None,
        right: None,
        dphi_xi0: f64::NAN,
        dphi_xik1: f64::NAN,
        phi_xik1: f64::NAN,
    };
    t.build_inner()?;
    t.dphi_xi0 = t.k_const;
    let last = t.inner.xs.len() - 1;
    t.dphi_xik1 = (-t.inner.a[last]).exp() * (t.inner.i[last] + t.k_const);
    t.phi_xik1 = t.inner.phi[last];
    if pb2_holds {
        t.left = Some(t.build_left()?);
    }
    if pb1_holds {
        t.right = Some(t.build_right()?);
    }

    let grid = t.grid();
    let mut h = f64::NEG_INFINITY;
    for &x in &grid {
        h = h.max(t.phi_prime(x)?);
    }
    t.h_bound = h + options.quad_tolerance;
    t.l_psi = t.one_sided_constant(&grid)?;
    t.l_psi_used = if t.l_psi < 0.0 {
        t.l_psi / t.h_bound
    } else {
        t.l_psi
    };
    Ok(t)
}

impl TransformArtifacts {
    pub fn problem(&self) -> &SdeProblem {
        &self.problem
    }

    pub fn options(&self) -> &TransformOptions {
        &self.options
    }

    fn tol(&self) -> f64 {
        self.options.quad_tolerance
    }

    fn g(&self, x: f64) -> f64 {
        let s = self.problem.diffusion(x);
        2.0 * self.problem.drift(x) / (s * s)
    }

    /// The chord of `b` through `(ξ₀, b(ξ₀))` and `(ξ_{k+1}, b(ξ_{k+1}))`.
    pub fn r(&self, x: f64) -> f64 {
        let b0 = self.problem.drift(self.xi0);
        let b1 = self.problem.drift(self.xi_k1);
        b0 + (x - self.xi0) * (b1 - b0) / (self.xi_k1 - self.xi0)
    }

    fn inner_source(&self, x: f64) -> f64 {
        let s = self.problem.diffusion(x);
        2.0 * self.r(x) / (s * s)
    }

    fn a_from(&self, x0: f64, a0: f64, x: f64) -> Result<f64> {
        Ok(a0 + integrate(|s| self.g(s), x0, x, self.tol())?)
    }

    fn i_from(&self, x0: f64, a0: f64, i0: f64, x: f64) -> Result<f64> {
        let f = |s: f64| nan_on_err(self.a_from(x0, a0, s)).exp() * self.inner_source(s);
        Ok(i0 + integrate(f, x0, x, self.tol())?)
    }

    fn inner_dphi_from(&self, x0: f64, a0: f64, i0: f64, x: f64) -> Result<f64> {
        let a = self.a_from(x0, a0, x)?;
        let i = self.i_from(x0, a0, i0, x)?;
        Ok((-a).exp() * (i + self.k_const))
    }

    fn outer_dphi_from(&self, slope: f64, x0: f64, a0: f64, x: f64) -> Result<f64> {
        Ok(1.0 + (slope - 1.0) * (-self.a_from(x0, a0, x)?).exp())
    }

    fn build_inner(&mut self) -> Result<()> {
        let mut xs = evenly(self.xi0, self.xi_k1, self.options.grid_resolution);
        xs.extend(self.problem.xi.iter().copied());
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let n = xs.len();
        let mut a = vec![0.0; n];
        let mut i = vec![0.0; n];
        let mut abs_i = 0.0;
        let mut abs_g = 0.0;
        for j in 0..n - 1 {
            let (x0, x1) = (xs[j], xs[j + 1]);
            a[j + 1] = self.a_from(x0, a[j], x1)?;
            i[j + 1] = self.i_from(x0, a[j], i[j], x1)?;
            let aj = a[j];
            abs_i += integrate(
                |s| (nan_on_err(self.a_from(x0, aj, s)).exp() * self.inner_source(s)).abs(),
                x0,
                x1,
                self.tol(),
            )?;
            abs_g += integrate(|s| self.g(s).abs(), x0, x1, self.tol())?;
        }
        self.k_lower_bound = 2.0 * abs_i + 2.0 * abs_g.exp() + 2.0;
        self.k_const = 1.01 * self.k_lower_bound + 1.0;

        let mut phi = vec![0.0; n];
        phi[0] = self.problem.drift(self.xi0);
        let mut carry = 0.0;
        for j in 0..n - 1 {
            let (x0, a0, i0) = (xs[j], a[j], i[j]);
            let piece = integrate(
                |s| nan_on_err(self.inner_dphi_from(x0, a0, i0, s)),
                x0,
                xs[j + 1],
                self.tol(),
            )?;
            // compensated running sum
            let y = piece - carry;
            let s = phi[j] + y;
            carry = (s - phi[j]) - y;
            phi[j + 1] = s;
        }
        self.inner = Table { xs, a, i, phi };
        Ok(())
    }

    fn outer_nodes(&self) -> usize {
        (self.options.grid_resolution / 4).max(8)
    }

    fn build_left(&self) -> Result<Table> {
        let xs = evenly(self.xi0 - self.options.span, self.xi0, self.outer_nodes());
        let n = xs.len();
        let mut a = vec![0.0; n];
        let mut phi = vec![0.0; n];
        phi[n - 1] = self.problem.drift(self.xi0);
        for j in (0..n - 1).rev() {
            let (x1, a1) = (xs[j + 1], a[j + 1]);
            a[j] = self.a_from(x1, a1, xs[j])?;
            let piece = integrate(
                |s| nan_on_err(self.outer_dphi_from(self.dphi_xi0, x1, a1, s)),
                x1,
                xs[j],
                self.tol(),
            )?;
            phi[j] = phi[j + 1] + piece;
        }
        Ok(Table {
            i: vec![0.0; n],
            xs,
            a,
            phi,
        })
    }

    fn build_right(&self) -> Result<Table> {
        let xs = evenly(
            self.xi_k1,
            self.xi_k1 + self.options.span,
            self.outer_nodes(),
        );
        let n = xs.len();
        let mut a = vec![0.0; n];
        let mut phi = vec![0.0; n];
        phi[0] = self.phi_xik1;
        for j in 0..n - 1 {
            let (x0, a0) = (xs[j], a[j]);
            a[j + 1] = self.a_from(x0, a0, xs[j + 1])?;
            let piece = integrate(
                |s| nan_on_err(self.outer_dphi_from(self.dphi_xik1, x0, a0, s)),
                x0,
                xs[j + 1],
                self.tol(),
            )?;
            phi[j + 1] = phi[j] + piece;
        }
        Ok(Table {
            i: vec![0.0; n],
            xs,
            a,
            phi,
        })
    }

    /// The endpoints belong to the outer branches, as in the definition of
    /// Ψ; `φ` and `φ'` agree there either way, `φ''` only one-sidedly.
    fn region(&self, x: f64) -> Region {
        if x <= self.xi0 {
            Region::Left
        } else if x >= self.xi_k1 {
            Region::Right
        } else {
            Region::Inner
        }
    }

    pub fn phi_prime(&self, x: f64) -> Result<f64> {
        match (self.region(x), &self.left, &self.right) {
            (Region::Inner, _, _) => {
                let t = &self.inner;
                let j = t.anchor(x);
                self.inner_dphi_from(t.xs[j], t.a[j], t.i[j], x)
            }
            (Region::Left, Some(t), _) => {
                let j = t.anchor(x);
                self.outer_dphi_from(self.dphi_xi0, t.xs[j], t.a[j], x)
            }
            (Region::Right, _, Some(t)) => {
                let j = t.anchor(x);
                self.outer_dphi_from(self.dphi_xik1, t.xs[j], t.a[j], x)
            }
            (Region::Left, None, _) => Ok(self.dphi_xi0),
            (Region::Right, _, None) => Ok(self.dphi_xik1),
        }
    }

    pub fn phi(&self, x: f64) -> Result<f64> {
        match (self.region(x), &self.left, &self.right) {
            (Region::Inner, _, _) => {
                let t = &self.inner;
                let j = t.anchor(x);
                let (x0, a0, i0) = (t.xs[j], t.a[j], t.i[j]);
                let piece = integrate(
                    |s| nan_on_err(self.inner_dphi_from(x0, a0, i0, s)),
                    x0,
                    x,
                    self.tol(),
                )?;
                Ok(t.phi[j] + piece)
            }
            (Region::Left, Some(t), _) | (Region::Right, _, Some(t)) => {
                let slope = if x < self.xi0 {
                    self.dphi_xi0
                } else {
                    self.dphi_xik1
                };
                let j = t.anchor(x);
                let (x0, a0) = (t.xs[j], t.a[j]);
                let piece = integrate(
                    |s| nan_on_err(self.outer_dphi_from(slope, x0, a0, s)),
                    x0,
                    x,
                    self.tol(),
                )?;
                Ok(t.phi[j] + piece)
            }
            (Region::Left, None, _) => {
                Ok(self.problem.drift(self.xi0) + (x - self.xi0) * self.dphi_xi0)
            }
            (Region::Right, _, None) => Ok(self.phi_xik1 + (x - self.xi_k1) * self.dphi_xik1),
        }
    }

    /// `φ''` from the differentiated closed forms; meaningful off Ξ.
    pub fn phi_second(&self, x: f64) -> Result<f64> {
        match (self.region(x), &self.left, &self.right) {
            (Region::Inner, _, _) => Ok(-self.g(x) * self.phi_prime(x)? + self.inner_source(x)),
            (Region::Left, Some(t), _) => {
                let j = t.anchor(x);
                let decay = (-self.a_from(t.xs[j], t.a[j], x)?).exp();
                Ok(-(self.dphi_xi0 - 1.0) * self.g(x) * decay)
            }
            (Region::Right, _, Some(t)) => {
                let j = t.anchor(x);
                let decay = (-self.a_from(t.xs[j], t.a[j], x)?).exp();
                Ok(-(self.dphi_xik1 - 1.0) * self.g(x) * decay)
            }
            _ => Ok(0.0),
        }
    }

    /// The transformed drift.
    pub fn psi(&self, x: f64) -> f64 {
        let b = self.problem.drift(x);
        if x <= self.xi0 {
            if self.pb2_holds {
                b
            } else {
                self.dphi_xi0 * b
            }
        } else if x >= self.xi_k1 {
            if self.pb1_holds {
                b
            } else {
                self.dphi_xik1 * b
            }
        } else {
            self.r(x)
        }
    }

    /// Evaluation grid over `[ξ₀ − span, ξ_{k+1} + span]`.
    pub fn grid(&self) -> Vec<f64> {
        evenly(
            self.xi0 - self.options.span,
            self.xi_k1 + self.options.span,
            self.options.grid_resolution,
        )
    }

    /// Largest difference quotient of Ψ over grid pairs that lie in the same
    /// continuity piece: consecutive pairs plus all pairs of a strided subgrid.
    fn one_sided_constant(&self, grid: &[f64]) -> Result<f64> {
        let piece = |x: f64| {
            if x <= self.xi0 {
                0
            } else if x < self.xi_k1 {
                1
            } else {
                2
            }
        };
        let vals: Vec<(f64, f64, u8)> = grid.iter().map(|&x| (x, self.psi(x), piece(x))).collect();
        let quotient = |p: &(f64, f64, u8), q: &(f64, f64, u8)| (q.1 - p.1) / (q.0 - p.0);
        let mut l = f64::NEG_INFINITY;
        for w in vals.windows(2) {
            if w[0].2 == w[1].2 {
                l = l.max(quotient(&w[0], &w[1]));
            }
        }
        let sub: Vec<_> = vals.iter().step_by(LIPSCHITZ_STRIDE).collect();
        for (k, p) in sub.iter().enumerate() {
            for q in &sub[k + 1..] {
                if p.2 == q.2 {
                    l = l.max(quotient(p, q));
                }
            }
        }
        if !l.is_finite() {
            return Err(Error::InvalidConfig(
                "grid too coarse to estimate l_psi".into(),
            ));
        }
        Ok(l)
    }

    /// `φ(ξ_{k+1})` by one adaptive pass over the working interval, as an
    /// independent route to the node-by-node accumulation.
    fn phi_xik1_direct(&self) -> Result<f64> {
        let scale = self.h_bound * (self.xi_k1 - self.xi0);
        let tol = self.tol().max(1e-15 * scale);
        let body = integrate_with_breaks(
            |s| nan_on_err(self.phi_prime(s)),
            self.xi0,
            self.xi_k1,
            &self.problem.xi,
            tol,
        )?;
        Ok(self.problem.drift(self.xi0) + body)
    }

    /// Second-order one-sided limits of `(φ, φ')` at a junction.
    fn limits(&self, x: f64) -> Result<[(f64, f64); 2]> {
        let h = JUNCTION_OFFSET;
        let side = |y: f64, dir: f64| -> Result<(f64, f64)> {
            let (p, dp, ddp) = (self.phi(y)?, self.phi_prime(y)?, self.phi_second(y)?);
            Ok((p + dir * h * dp + 0.5 * h * h * ddp, dp + dir * h * ddp))
        };
        Ok([side(x - h, 1.0)?, side(x + h, -1.0)?])
    }

    pub fn report(&self) -> Result<TransformReport> {
        let grid = self.grid();
        let mut min_dphi = f64::INFINITY;
        let mut p4 = 0.0f64;
        let mut p3 = 0.0f64;
        for &x in &grid {
            let dp = self.phi_prime(x)?;
            min_dphi = min_dphi.min(dp);
            if self.problem.dist_to_xi(x) > self.options.p4_clearance {
                let b = self.problem.drift(x);
                let s2 = self.problem.diffusion(x).powi(2);
                let ddp = self.phi_second(x)?;
                p3 = p3.max(ddp.abs());
                let residual = (dp * b + 0.5 * ddp * s2 - self.psi(x)).abs();
                p4 = p4.max(residual / (1.0 + b.abs() + s2));
            }
        }
        let [l0, r0] = self.limits(self.xi0)?;
        let [l1, r1] = self.limits(self.xi_k1)?;
        let direct = self.phi_xik1_direct()?;
        let phi_gap = (l0.0 - r0.0)
            .abs()
            .max((l1.0 - r1.0).abs())
            .max((direct - self.phi_xik1).abs());
        let dphi_gap = (l0.1 - r0.1).abs().max((l1.1 - r1.1).abs()) / self.h_bound;
        Ok(TransformReport {
            problem: self.problem.name.clone(),
            xi0: self.xi0,
            xi_k1: self.xi_k1,
            pb1_holds: self.pb1_holds,
            pb2_holds: self.pb2_holds,
            k_const: self.k_const,
            k_lower_bound: self.k_lower_bound,
            h_bound: self.h_bound,
            l_psi: self.l_psi,
            l_psi_used: self.l_psi_used,
            grid_points: grid.len(),
            min_phi_prime: min_dphi,
            max_abs_phi_second: p3,
            checks: vec![
                PropertyCheck::new("P2", (1.0 - min_dphi).max(0.0), P2_TOLERANCE),
                PropertyCheck::new("P4", p4, P4_TOLERANCE),
                PropertyCheck::new("phi_junction", phi_gap, JUNCTION_TOLERANCE),
                PropertyCheck::new("phi_prime_junction", dphi_gap, JUNCTION_TOLERANCE),
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformReport {
    pub problem: String,
    pub xi0: f64,
    pub xi_k1: f64,
    pub pb1_holds: bool,
    pub pb2_holds: bool,
    pub k_const: f64,
    pub k_lower_bound: f64,
    pub h_bound: f64,
    pub l_psi: f64,
    pub l_psi_used: f64,
    pub grid_points: usize,
    pub min_phi_prime: f64,
    /// Grid maximum of |φ''| away from Ξ.
    pub max_abs_phi_second: f64,
    pub checks: Vec<PropertyCheck>,
}

impl TransformReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::get_problem;

    fn small() -> TransformOptions {
        TransformOptions {
            grid_resolution: 512,
            ..TransformOptions::default()
        }
    }

    fn flat() -> SdeProblem {
        SdeProblem::builder("flat", |_| 0.0, |_| 1.0)
            .xi(vec![0.0])
            .build()
            .unwrap()
    }

    #[test]
    fn zero_drift_gives_affine_phi() {
        let t = build_transform(&flat(), small()).unwrap();
        assert_eq!((t.xi0, t.xi_k1), (-1.0, 1.0));
        assert!(t.pb1_holds && t.pb2_holds);
        assert!((t.k_lower_bound - 4.0).abs() < 1e-12);
        assert!((t.k_const - 5.04).abs() < 1e-12);
        for x in [-2.5, -1.0, -0.3, 0.0, 0.7, 1.0, 2.9] {
            assert!((t.phi_prime(x).unwrap() - 5.04).abs() < 1e-12, "{x}");
            assert!((t.phi(x).unwrap() - 5.04 * (x + 1.0)).abs() < 1e-11, "{x}");
            assert_eq!(t.psi(x), 0.0);
        }
    }

    #[test]
    fn ex3_endpoints_and_properties() {
        let t = build_transform(&get_problem("ex3").unwrap(), small()).unwrap();
        assert_eq!((t.xi0, t.xi_k1), (-2.0, 3.0));
        assert!(!t.pb1_holds && !t.pb2_holds);
        assert!(t.k_const > t.k_lower_bound);
        assert!(t.l_psi < 0.0);
        assert!((t.l_psi_used - t.l_psi / t.h_bound).abs() < 1e-15);
        let r = t.report().unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn ex4_uses_relaxing_outer_branches() {
        let t = build_transform(&get_problem("ex4").unwrap(), small()).unwrap();
        assert_eq!((t.xi0, t.xi_k1), (-1.0, 3.0));
        assert!(t.pb1_holds && t.pb2_holds);
        // slope relaxes towards 1 far out
        let far = t.phi_prime(-9.0).unwrap();
        assert!(far >= 1.0 && far < t.phi_prime(-1.0).unwrap());
        let r = t.report().unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        for name in ["ex3", "ex4"] {
            let t = build_transform(&get_problem(name).unwrap(), small()).unwrap();
            for x in [-3.3, -1.5, -0.4, 0.6, 1.3, 2.5, 3.7] {
                let h = 1e-5;
                let fd = (t.phi_prime(x + h).unwrap() - t.phi_prime(x - h).unwrap()) / (2.0 * h);
                let exact = t.phi_second(x).unwrap();
                assert!(
                    (fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()),
                    "{name} {x}: {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn phi_derivative_matches_finite_differences() {
        let t = build_transform(&get_problem("ex3").unwrap(), small()).unwrap();
        for x in [-2.7, -1.1, 0.5, 1.9, 2.95, 4.1] {
            let h = 1e-5;
            let fd = (t.phi(x + h).unwrap() - t.phi(x - h).unwrap()) / (2.0 * h);
            let exact = t.phi_prime(x).unwrap();
            assert!(
                (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                "{x}: {fd} vs {exact}"
            );
        }
    }

    #[test]
    fn zero_diffusion_is_rejected() {
        let err = build_transform(&get_problem("ex1").unwrap(), small()).unwrap_err();
        assert!(matches!(err, Error::PositivityViolation { .. }), "{err:?}");
    }

    #[test]
    fn sign_search_failure_and_empty_xi() {
        // negative near 0.5 only, so never at integer offsets
        let dip = |x: f64| 1.0 - 2.0 * (-100.0 * (x - 0.5) * (x - 0.5)).exp();
        let wobble = SdeProblem::builder("wobble", dip, |_| 1.0)
            .xi(vec![0.0])
            .build()
            .unwrap();
        assert!(matches!(
            build_transform(&wobble, small()),
            Err(Error::SignSearch(_))
        ));
        let none = SdeProblem::builder("none", |_| 0.0, |_| 1.0)
            .build()
            .unwrap();
        assert!(matches!(
            build_transform(&none, small()),
            Err(Error::EmptyDiscontinuitySet)
        ));
    }
}
