//! Adaptive Gauss–Kronrod (7, 15) quadrature on finite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

/// Gauss weights for the odd-indexed Kronrod nodes (and the centre).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 50;
const MAX_SPLITS: usize = 50_000;

/// One G7–K15 panel: Kronrod estimate and |Kronrod − Gauss|.
fn panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// bisection. `b < a` flips the sign.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let (whole, err) = panel(&mut f, a, b);
    let mut stack = vec![(a, b, whole, err, 0u32)];
    let mut total = 0.0;
    let mut compensation = 0.0;
    let mut worst = 0.0f64;
    let width = b - a;
    let mut splits = 0usize;
    while let Some((lo, hi, value, err, depth)) = stack.pop() {
        let budget = tol * (hi - lo) / width;
        if err <= budget.max(32.0 * f64::EPSILON * value.abs()) {
            // Kahan summation keeps accumulated rounding below the tolerance
            let y = value - compensation;
            let t = total + y;
            compensation = (t - total) - y;
            total = t;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        if depth >= MAX_DEPTH || splits >= MAX_SPLITS || !(mid > lo && mid < hi) {
            worst = worst.max(err);
            total += value;
            continue;
        }
        splits += 1;
        let (left, el) = panel(&mut f, lo, mid);
        let (right, er) = panel(&mut f, mid, hi);
        stack.push((mid, hi, right, er, depth + 1));
        stack.push((lo, mid, left, el, depth + 1));
    }
    if worst > tol || !total.is_finite() {
        return Err(Error::QuadratureTolerance {
            a,
            b,
            tolerance: tol,
            estimate: total,
        });
    }
    Ok(total)
}

/// [`integrate`] over consecutive pieces split at `breaks` (points outside
/// `(a, b)` are ignored). Use for integrands with known kinks or jumps.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    if b < a {
        return integrate_with_breaks(f, b, a, breaks, tol).map(|v| -v);
    }
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let pieces = (pts.len() - 1) as f64;
    let mut sum = 0.0;
    for w in pts.windows(2) {
        sum += integrate(&mut f, w[0], w[1], tol / pieces)?;
    }
    Ok(sum)
}
