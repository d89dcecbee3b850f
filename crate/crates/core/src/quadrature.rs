//! Adaptive Gauss–Kronrod quadrature and the log-space Laplace transform
//! `log ∫₀^∞ e^{t g(s) − s} ds` used for cumulant generating functions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

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
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Result of a quadrature: value and estimated absolute error.
#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Quad {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    Quad { value: k * h, error: ((k - g) * h).abs() }
}

struct Panel {
    a: f64,
    b: f64,
    q: Quad,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.q.error == o.q.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.q.error.total_cmp(&o.q.error)
    }
}

/// Globally adaptive Gauss–Kronrod 7/15 on `[a, b]` split at `cuts`.
///
/// Bisects the panel with the largest error until the total error is below
/// `max(abs_tol, rel_tol·|I|)`; fails once `max_panels` is reached.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    cuts: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<Quad> {
    let mut edges = vec![a];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(b);
    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        if w[1] > w[0] {
            heap.push(Panel { a: w[0], b: w[1], q: gk15(&f, w[0], w[1]) });
        }
    }
    loop {
        let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.q.value, e + p.q.error));
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quad { value, error });
        }
        if heap.len() >= max_panels {
            let rel = if value != 0.0 { error / value.abs() } else { f64::INFINITY };
            return Err(Error::Quadrature { achieved_error: rel });
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            let rel = if value != 0.0 { error / value.abs() } else { f64::INFINITY };
            return Err(Error::Quadrature { achieved_error: rel });
        }
        heap.push(Panel { a: worst.a, b: mid, q: gk15(&f, worst.a, mid) });
        heap.push(Panel { a: mid, b: worst.b, q: gk15(&f, mid, worst.b) });
    }
}

/// `t·g` with the convention `t·(−∞) = −∞` for every `t ≥ 0`.
#[inline]
pub fn scaled(g: f64, t: f64) -> f64 {
    if g == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        t * g
    }
}

/// Log-space quadrature result: `value = log ∫`, `error` = absolute error in
/// the log.
#[derive(Debug, Clone, Copy)]
pub struct LogQuad {
    pub value: f64,
    pub error: f64,
}

const Y_MIN: f64 = -60.0;
const Y_MAX: f64 = 700.0;
const WINDOW: f64 = 70.0;

/// `log ∫₀^∞ exp(t·g(s) − s) ds`, i.e. `log E[e^{t g(E)}]` for `E ~ Exp(1)`.
///
/// Integrates in `y = log s` with the integrand scaled by its maximum so the
/// mass near the dominating tail point is resolved even when it sits at
/// `s ~ 10³` and beyond.
pub fn log_laplace(g: impl Fn(f64) -> f64, breakpoints: &[f64], t: f64) -> Result<LogQuad> {
    log_laplace_below(g, breakpoints, t, f64::INFINITY)
}

/// `log ∫₀^{s_max} exp(t·g(s) − s) ds`.
pub fn log_laplace_below(g: impl Fn(f64) -> f64, breakpoints: &[f64], t: f64, s_max: f64) -> Result<LogQuad> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be finite and nonnegative, got {t}")));
    }
    if !(s_max > 0.0) {
        return Ok(LogQuad { value: f64::NEG_INFINITY, error: 0.0 });
    }
    let y_cap = s_max.ln();
    let psi = |y: f64| {
        if y > y_cap {
            return f64::NEG_INFINITY;
        }
        let s = y.exp();
        scaled(g(s), t) - s + y
    };
    // Coarse scan for the location of the maximum.
    let step = 0.25;
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut y = Y_MIN;
    let mut last = f64::NEG_INFINITY;
    while y <= Y_MAX {
        let p = psi(y);
        if p > best.0 {
            best = (p, y);
        }
        if p < best.0 - WINDOW && p < last && y > 0.0 {
            break;
        }
        last = p;
        y += step;
    }
    if best.0 == f64::NEG_INFINITY {
        return Ok(LogQuad { value: f64::NEG_INFINITY, error: 0.0 });
    }
    // Golden-section refinement around the best grid point.
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if psi(m1) < psi(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let y_peak = 0.5 * (lo + hi);
    let psi_max = psi(y_peak).max(best.0);

    let mut y_lo = best.1;
    while y_lo > Y_MIN && psi(y_lo) > psi_max - WINDOW {
        y_lo -= step;
    }
    let mut y_hi = best.1;
    while y_hi < Y_MAX && psi(y_hi) > psi_max - WINDOW {
        y_hi += step;
    }
    let y_hi = y_hi.min(y_cap);
    let mut cuts: Vec<f64> = breakpoints.iter().filter(|b| **b > 0.0).map(|b| b.ln()).collect();
    cuts.push(y_peak.min(y_cap));
    let q = integrate(|y| (psi(y) - psi_max).exp(), y_lo, y_hi, &cuts, 0.0, 1e-13, 20_000)?;
    if !(q.value > 0.0) {
        return Ok(LogQuad { value: f64::NEG_INFINITY, error: 0.0 });
    }
    Ok(LogQuad { value: psi_max + q.value.ln(), error: q.error / q.value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, &[], 1e-14, 1e-14, 100).unwrap();
        assert!((q.value - 0.0).abs() < 1e-13);
    }

    #[test]
    fn gamma_function_identity() {
        // ∫ s^k e^{-s} ds = Γ(k+1): with g = ln s, t = k.
        let q = log_laplace(|s| s.ln(), &[], 4.5).unwrap();
        let expect = statrs::function::gamma::ln_gamma(5.5);
        assert!((q.value - expect).abs() < 1e-11, "{} vs {}", q.value, expect);
    }

    #[test]
    fn truncated_integral() {
        // ∫₀^{s1} s e^{-s} ds = 1 − (1 + s1) e^{−s1}.
        for s1 in [0.3f64, 2.0, 9.0] {
            let q = log_laplace_below(|s| s.ln(), &[], 1.0, s1).unwrap();
            let expect = (1.0 - (1.0 + s1) * (-s1).exp()).ln();
            assert!((q.value - expect).abs() < 1e-12, "{s1}: {} vs {expect}", q.value);
        }
    }

    #[test]
    fn jump_breakpoint_is_resolved() {
        // g = -inf below s0, 0 above: ∫_{s0}^∞ e^{-s} = e^{-s0}.
        let s0 = 0.7f64;
        let q = log_laplace(|s| if s < s0 { f64::NEG_INFINITY } else { 0.0 }, &[s0], 3.0).unwrap();
        assert!((q.value + s0).abs() < 1e-12);
    }

    #[test]
    fn panel_budget_exhaustion_is_reported() {
        let r = integrate(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, &[], 0.0, 1e-15, 4);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
