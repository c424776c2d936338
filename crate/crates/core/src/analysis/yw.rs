//! Yamada–Watanabe approximations of `|x|`.
//!
//! For `δ > 1`, `ε > 0` the density `ψ` lives on `[ε/δ, ε]`. In the log
//! coordinate `u = ln(z δ/ε) / ln δ ∈ [0, 1]` we take a trapezoidal weight `w`
//! rising linearly on `[0, τ]`, flat on `[τ, 1−τ]`, falling on `[1−τ, 1]`, and
//! set
//!
//! ```text
//! ψ(z) = w(u) / ((1 − τ) z ln δ)
//! ```
//!
//! so `∫ψ = 1` exactly and `ψ ≤ 2 / (z ln δ)` whenever `τ ≤ 1/2`.
//! `φ(x) = ∫₀^{|x|} ∫₀^y ψ(z) dz dy` is computed by nested quadrature.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::integrate_with_breaks;

/// Taper fraction of the log-support on each side.
pub const TAPER: f64 = 0.1;
pub const DEFAULT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YwParams {
    pub delta: f64,
    pub eps: f64,
}

impl YwParams {
    pub fn new(delta: f64, eps: f64) -> Result<Self> {
        if !(delta > 1.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delta must exceed 1, got {delta}"
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eps must be positive, got {eps}"
            )));
        }
        Ok(Self { delta, eps })
    }

    /// Lower end `ε/δ` of the support.
    pub fn lower(&self) -> f64 {
        self.eps / self.delta
    }

    fn log_delta(&self) -> f64 {
        self.delta.ln()
    }

    /// Points where `ψ` has kinks.
    fn breaks(&self) -> [f64; 2] {
        let a = self.lower();
        [a * self.delta.powf(TAPER), a * self.delta.powf(1.0 - TAPER)]
    }
}

pub fn yw_psi(z: f64, params: &YwParams) -> f64 {
    let a = params.lower();
    if !(z > a && z < params.eps) {
        return 0.0;
    }
    let ld = params.log_delta();
    let u = (z / a).ln() / ld;
    let w = (u / TAPER).min(1.0).min((1.0 - u) / TAPER).max(0.0);
    w / ((1.0 - TAPER) * z * ld)
}

/// Nested-quadrature evaluator for `φ`, `φ'`, `φ''`.
#[derive(Debug, Clone, Copy)]
pub struct YwFunctions {
    pub params: YwParams,
    pub tolerance: f64,
}

impl YwFunctions {
    pub fn new(params: YwParams) -> Self {
        Self {
            params,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn psi(&self, z: f64) -> f64 {
        yw_psi(z, &self.params)
    }

    /// `∫ψ` over the support.
    pub fn mass(&self) -> Result<f64> {
        self.cumulative(self.params.eps)
    }

    /// `∫₀^y ψ` for `y ≥ 0`.
    fn cumulative(&self, y: f64) -> Result<f64> {
        let a = self.params.lower();
        if y <= a {
            return Ok(0.0);
        }
        let top = y.min(self.params.eps);
        integrate_with_breaks(
            |z| self.psi(z),
            a,
            top,
            &self.params.breaks(),
            self.tolerance,
        )
    }

    pub fn phi_prime(&self, x: f64) -> Result<f64> {
        Ok(x.signum() * self.cumulative(x.abs())?)
    }

    pub fn phi_second(&self, x: f64) -> f64 {
        self.psi(x.abs())
    }

    pub fn phi(&self, x: f64) -> Result<f64> {
        let ax = x.abs();
        let a = self.params.lower();
        if ax <= a {
            return Ok(0.0);
        }
        let eps = self.params.eps;
        let top = ax.min(eps);
        let inner = integrate_with_breaks(
            |y| self.cumulative(y).unwrap_or(f64::NAN),
            a,
            top,
            &self.params.breaks(),
            self.tolerance,
        )?;
        if ax > eps {
            Ok(inner + (ax - eps) * self.mass()?)
        } else {
            Ok(inner)
        }
    }
}

pub fn yw_phi(x: f64, params: &YwParams) -> Result<f64> {
    YwFunctions::new(*params).phi(x)
}

pub fn yw_phi_prime(x: f64, params: &YwParams) -> Result<f64> {
    YwFunctions::new(*params).phi_prime(x)
}

pub fn yw_phi_second(x: f64, params: &YwParams) -> f64 {
    YwFunctions::new(*params).phi_second(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyCheck {
    pub fn new(name: &str, max_violation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_violation,
            tolerance,
            passed: max_violation < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YwReport {
    pub params: YwParams,
    pub sample_count: usize,
    pub mass: f64,
    pub checks: Vec<PropertyCheck>,
}

impl YwReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const MASS_TOLERANCE: f64 = 1e-6;
pub const PROPERTY_TOLERANCE: f64 = 1e-8;

/// Deterministic sample points: half log-spaced over `[ε/(4δ), 4ε]`, half
/// evenly spaced over `(0, 2ε]`, with alternating signs.
pub fn sample_points(params: &YwParams, count: usize) -> Vec<f64> {
    let lo = params.lower() / 4.0;
    let hi = 4.0 * params.eps;
    let half = count / 2;
    let log_part = (0..half).map(|i| {
        let s = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.5
        };
        lo * (hi / lo).powf(s)
    });
    let rest = count - half;
    let lin_part = (1..=rest).map(|i| 2.0 * params.eps * i as f64 / rest as f64);
    log_part
        .chain(lin_part)
        .enumerate()
        .map(|(i, x)| if i % 2 == 0 { x } else { -x })
        .collect()
}

/// Checks the five Yamada–Watanabe properties on `sample_count` points.
pub fn verify_yw(params: &YwParams, sample_count: usize) -> Result<YwReport> {
    let f = YwFunctions::new(*params);
    let (delta, eps) = (params.delta, params.eps);
    let ld = delta.ln();
    let a = params.lower();
    let mass = f.mass()?;
    let mut v = [0.0f64; 5];
    for x in sample_points(params, sample_count) {
        let ax = x.abs();
        let dp = f.phi_prime(x)?;
        let dp_abs = f.phi_prime(ax)?;
        let phi = f.phi(x)?;
        let psi = f.phi_second(ax);
        // YW1: φ'(x) = sign(x) φ'(|x|)
        v[0] = v[0].max((dp - x.signum() * dp_abs).abs());
        // YW2: 0 ≤ |φ'| ≤ 1
        v[1] = v[1].max(dp.abs() - 1.0).max(-dp_abs);
        // YW3: |x| ≤ ε + φ(x)
        v[2] = v[2].max(ax - eps - phi);
        // YW4: φ'(|x|)/|x| ≤ δ/ε
        v[3] = v[3].max(dp_abs / ax - delta / eps);
        // YW5: ψ(|x|) ≤ 2/(|x| ln δ) on the support, ≤ 2δ/(ε ln δ) always
        let local = if ax >= a && ax <= eps {
            2.0 / (ax * ld)
        } else {
            0.0
        };
        v[4] = v[4].max(psi - local).max(psi - 2.0 * delta / (eps * ld));
    }
    let mut checks = vec![PropertyCheck::new(
        "mass",
        (mass - 1.0).abs(),
        MASS_TOLERANCE,
    )];
    for (i, name) in ["YW1", "YW2", "YW3", "YW4", "YW5"].iter().enumerate() {
        checks.push(PropertyCheck::new(name, v[i].max(0.0), PROPERTY_TOLERANCE));
    }
    Ok(YwReport {
        params: *params,
        sample_count,
        mass,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form of `∫₀^y ψ` in the log coordinate.
    fn cumulative_oracle(y: f64, p: &YwParams) -> f64 {
        let a = p.lower();
        if y <= a {
            return 0.0;
        }
        if y >= p.eps {
            return 1.0;
        }
        let u = (y / a).ln() / p.delta.ln();
        let t = TAPER;
        let w = if u <= t {
            u * u / (2.0 * t)
        } else if u <= 1.0 - t {
            t / 2.0 + (u - t)
        } else {
            1.0 - t - (1.0 - u) * (1.0 - u) / (2.0 * t)
        };
        w / (1.0 - t)
    }

    /// Composite Simpson on the oracle, with many panels.
    fn phi_oracle(x: f64, p: &YwParams) -> f64 {
        let ax = x.abs();
        let a = p.lower();
        if ax <= a {
            return 0.0;
        }
        let top = ax.min(p.eps);
        let n = 200_000;
        let h = (top - a) / n as f64;
        let mut s = cumulative_oracle(a, p) + cumulative_oracle(top, p);
        for i in 1..n {
            let c = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += c * cumulative_oracle(a + i as f64 * h, p);
        }
        s * h / 3.0 + (ax - top).max(0.0)
    }

    #[test]
    fn support_and_bound() {
        let p = YwParams::new(2.0, 1.0).unwrap();
        assert_eq!(yw_psi(0.4, &p), 0.0);
        assert_eq!(yw_psi(1.2, &p), 0.0);
        assert_eq!(yw_psi(-0.7, &p), 0.0);
        let mid = 0.75;
        assert!(yw_psi(mid, &p) <= 2.0 / (mid * 2f64.ln()));
        assert!(yw_psi(mid, &p) > 0.0);
    }

    #[test]
    fn unit_mass() {
        for (d, e) in [(2.0, 0.1), (10.0, 0.1), (1.05, 3.0), (1e4, 1e-3)] {
            let f = YwFunctions::new(YwParams::new(d, e).unwrap());
            assert!((f.mass().unwrap() - 1.0).abs() < 1e-12, "{d} {e}");
        }
    }

    #[test]
    fn derivatives_match_closed_form() {
        let p = YwParams::new(2.0, 0.1).unwrap();
        let f = YwFunctions::new(p);
        for x in [0.01, 0.051, 0.06, 0.075, 0.093, 0.0999, 0.2, -0.07] {
            let got = f.phi_prime(x).unwrap();
            let want = f64::signum(x) * cumulative_oracle(f64::abs(x), &p);
            assert!((got - want).abs() < 1e-12, "{x}: {got} vs {want}");
        }
        assert_eq!(f.phi_prime(0.0).unwrap(), 0.0);
    }

    #[test]
    fn phi_matches_simpson_oracle() {
        let p = YwParams::new(2.0, 0.1).unwrap();
        let f = YwFunctions::new(p);
        assert_eq!(f.phi(0.0).unwrap(), 0.0);
        for x in [0.03, 0.06, 0.08, 0.1, 0.35, -0.2] {
            let got = f.phi(x).unwrap();
            let want = phi_oracle(x, &p);
            assert!((got - want).abs() < 1e-10, "{x}: {got} vs {want}");
        }
        // beyond the support φ' saturates at 1
        assert!((f.phi_prime(0.5).unwrap() - 1.0).abs() < 1e-13);
        // |x| − φ(x) ≤ ε
        for x in [0.1, 0.3, 2.0] {
            assert!(x - f.phi(x).unwrap() <= 0.1);
        }
    }

    #[test]
    fn phi_is_even_and_convex() {
        let f = YwFunctions::new(YwParams::new(3.0, 0.2).unwrap());
        let xs: Vec<f64> = (0..60).map(|i| i as f64 * 0.005).collect();
        for &x in &xs {
            assert_eq!(f.phi(x).unwrap(), f.phi(-x).unwrap());
        }
        let vals: Vec<f64> = xs.iter().map(|&x| f.phi(x).unwrap()).collect();
        for w in vals.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-14);
        }
    }

    #[test]
    fn verify_passes_for_standard_params() {
        for p in [
            YwParams::new(2.0, 0.1).unwrap(),
            YwParams::new(1e-4f64.powf(-0.25), 1e-4f64.powf(0.25)).unwrap(),
        ] {
            let r = verify_yw(&p, 1000).unwrap();
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.checks.len(), 6);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(YwParams::new(1.0, 0.1).is_err());
        assert!(YwParams::new(2.0, 0.0).is_err());
    }

    #[test]
    fn sample_points_cover_both_signs() {
        let p = YwParams::new(2.0, 0.1).unwrap();
        let pts = sample_points(&p, 1000);
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().any(|&x| x < 0.0));
        assert!(pts.iter().any(|&x| x.abs() < p.lower()));
        assert!(pts.iter().any(|&x| x.abs() > p.eps));
        assert!(pts.iter().all(|&x| x != 0.0));
    }
}
