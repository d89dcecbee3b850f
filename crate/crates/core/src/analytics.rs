//! Closed-form and quadrature-based analytic objects of the potential law:
//! the cumulant generating function `H`, cumulant exponents `G_θ`, transition
//! exponents, growth exponents `J`, critical functions and the rate function
//! `I` of the random-walk exit time.

use serde::Serialize;

use crate::env::{PotentialLaw, TailFamily};
use crate::error::{Error, Result};
use crate::quadrature::{log_laplace, LogQuad};

/// `H(t) = log <e^{v(0) t}>` with its quadrature error in the log.
pub fn cumulant_h_with_error(family: &TailFamily, t: f64) -> Result<LogQuad> {
    family.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("H(t) needs finite t ≥ 0, got {t}")));
    }
    match *family {
        TailFamily::HardCore { p } => Ok(LogQuad { value: (-p).ln_1p(), error: 0.0 }),
        _ if t == 0.0 => Ok(LogQuad { value: 0.0, error: 0.0 }),
        _ => log_laplace(|s| family.potential_at_exp(s), &family.breakpoints(), t),
    }
}

pub fn cumulant_h(family: &TailFamily, t: f64) -> Result<f64> {
    cumulant_h_with_error(family, t).map(|q| q.value)
}

/// `H` tabulated on a grid of times.
#[derive(Debug, Clone, Serialize)]
pub struct CumulantCurve {
    pub family: TailFamily,
    pub t: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn cumulant_curve(family: &TailFamily, grid: &[f64]) -> Result<CumulantCurve> {
    let h = grid.iter().map(|&t| cumulant_h(family, t)).collect::<Result<Vec<_>>>()?;
    Ok(CumulantCurve { family: *family, t: grid.to_vec(), h })
}

/// `G_θ(t) = (H((1+θ)t) − (1+θ)H(t))/θ`.
pub fn cumulant_g<L: PotentialLaw + ?Sized>(law: &L, theta: f64, t: f64) -> Result<f64> {
    check_theta(theta)?;
    let h1 = law.cumulant_h((1.0 + theta) * t)?;
    let h0 = law.cumulant_h(t)?;
    Ok((h1 - (1.0 + theta) * h0) / theta)
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta == 0.0 || theta <= -1.0 || !theta.is_finite() {
        return Err(Error::invalid(format!("θ must satisfy θ ≠ 0, θ > −1; got {theta}")));
    }
    Ok(())
}

/// Shape of the growth exponent `J(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthKind {
    /// `J(t) = H(t)`.
    Cumulant,
    /// `J(t) = t`.
    Linear,
    /// `J(t) = t / (2 √log t)`.
    AlmostBounded,
    /// `J(t) = c₂ · t^{d/(d+2)}`, `c₂` unknown.
    HardCore { exponent: f64 },
    /// `J(t) = χ · t / α_t²`, `χ` unknown, `α_t` from the scaling equation.
    ScaledTime { rho_prime: f64 },
}

impl GrowthKind {
    pub fn label(&self) -> &'static str {
        match self {
            GrowthKind::Cumulant => "H(t)",
            GrowthKind::Linear => "t",
            GrowthKind::AlmostBounded => "t/(2*sqrt(log t))",
            GrowthKind::HardCore { .. } => "c2*t^(d/(d+2))",
            GrowthKind::ScaledTime { .. } => "chi*t/alpha_t^2",
        }
    }

    pub fn params(&self) -> String {
        match self {
            GrowthKind::HardCore { exponent } => format!("exponent={exponent};c2=symbolic"),
            GrowthKind::ScaledTime { rho_prime } => format!("rho_prime={rho_prime};chi=symbolic"),
            _ => String::new(),
        }
    }

    /// Name of the unknown multiplicative constant, if any.
    pub fn unknown_constant(&self) -> Option<&'static str> {
        match self {
            GrowthKind::HardCore { .. } => Some("c2"),
            GrowthKind::ScaledTime { .. } => Some("chi"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentTable {
    pub family: TailFamily,
    pub dim: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub growth: GrowthKind,
    /// Set when the exponents are not backed by a closed-form growth scale
    /// (the hard-core case); experiments must calibrate empirically.
    pub empirical_only: bool,
}

/// `ν = 1/(d + 2 + 2ρ)` of the Fréchet family.
pub fn frechet_nu(rho: f64, dim: usize) -> f64 {
    1.0 / (dim as f64 + 2.0 + 2.0 * rho)
}

pub fn transition_exponents(family: &TailFamily, dim: usize) -> Result<ExponentTable> {
    family.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let d = dim as f64;
    let (gamma1, gamma2, growth, empirical_only) = match *family {
        TailFamily::Weibull { rho } => {
            let g1 = 1.0 / (rho - 1.0);
            (g1, 2f64.powf(rho / (rho - 1.0)) * g1, GrowthKind::Cumulant, false)
        }
        TailFamily::DoubleExp { rho } => (rho, 2.0 * rho, GrowthKind::Linear, false),
        TailFamily::SquaredDoubleExp => (1.0, 2.0, GrowthKind::AlmostBounded, false),
        TailFamily::Frechet { rho } => {
            let nu = frechet_nu(rho, dim);
            let g1 = nu * nu;
            (g1, 2f64.powf(1.0 - g1) * g1, GrowthKind::ScaledTime { rho_prime: rho / (rho + 1.0) }, false)
        }
        TailFamily::HardCore { .. } => {
            let g1 = 2.0 / (d + 2.0);
            (g1, 2f64.powf(1.0 - g1) * g1, GrowthKind::HardCore { exponent: d / (d + 2.0) }, true)
        }
    };
    Ok(ExponentTable { family: *family, dim, gamma1, gamma2, growth, empirical_only })
}

/// Critical function `a(γ)` on `(0, γ₁]`.
pub fn critical_a(family: &TailFamily, dim: usize, gamma: f64) -> Result<f64> {
    let table = transition_exponents(family, dim)?;
    if !(gamma > 0.0 && gamma <= table.gamma1 * (1.0 + 1e-15)) {
        return Err(Error::invalid(format!("γ = {gamma} outside (0, γ₁ = {}]", table.gamma1)));
    }
    match *family {
        TailFamily::Weibull { rho } => Ok(rho / (rho - 1.0) * ((rho - 1.0) * gamma).powf(1.0 / rho) - gamma),
        TailFamily::DoubleExp { rho } => Ok(gamma * ((gamma - rho) / rho).exp()),
        TailFamily::SquaredDoubleExp => Ok(gamma * (gamma - 1.0).exp()),
        TailFamily::Frechet { rho } => {
            let nu2 = frechet_nu(rho, dim).powi(2);
            Ok((1.0 - nu2) * (gamma / nu2).powf(-nu2 / (1.0 - nu2)) + gamma)
        }
        TailFamily::HardCore { .. } => {
            Err(Error::invalid("no critical function is available for the hard-core family"))
        }
    }
}

/// `I(y) = y·asinh(y) − √(1+y²) + 1`, the Legendre transform of `cosh λ − 1`.
/// Even in `y`.
pub fn rate_i(y: f64) -> f64 {
    let y = y.abs();
    let r = (1.0 + y * y).sqrt();
    y * y.asinh() - y * y / (r + 1.0)
}

/// Inverse of `I` on `[0, ∞)`.
pub fn rate_i_inverse(level: f64) -> f64 {
    if level <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while rate_i(hi) < level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate_i(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `J(t)`; `unknown_constant` names the multiplicative constant the value
/// omits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthValue {
    pub value: f64,
    pub unknown_constant: Option<&'static str>,
}

pub fn growth_j(family: &TailFamily, dim: usize, t: f64) -> Result<GrowthValue> {
    let table = transition_exponents(family, dim)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("J(t) needs t > 0, got {t}")));
    }
    let value = match table.growth {
        GrowthKind::Cumulant => cumulant_h(family, t)?,
        GrowthKind::Linear => t,
        GrowthKind::AlmostBounded => {
            if t <= std::f64::consts::E {
                return Err(Error::invalid("t/(2√log t) is only used for t > e"));
            }
            t / (2.0 * t.ln().sqrt())
        }
        GrowthKind::HardCore { exponent } => t.powf(exponent),
        GrowthKind::ScaledTime { .. } => {
            let alpha = scale_function(family, dim, t)?;
            t / (alpha * alpha)
        }
    };
    Ok(GrowthValue { value, unknown_constant: table.growth.unknown_constant() })
}

/// `k(s) = H(2s) − 2H(s)`, the normalisation of the second difference of `H`.
fn second_difference(family: &TailFamily, s: f64) -> Result<f64> {
    Ok(cumulant_h(family, 2.0 * s)? - 2.0 * cumulant_h(family, s)?)
}

/// Scale function `α_t` solving `k(t α^{−d}) / (t α^{−d}) = α^{−2}` by
/// bisection in `log α`.
pub fn scale_function(family: &TailFamily, dim: usize, t: f64) -> Result<f64> {
    let d = dim as f64;
    let f = |log_alpha: f64| -> Result<f64> {
        let s = t * (-d * log_alpha).exp();
        Ok((second_difference(family, s)? / s).ln() + 2.0 * log_alpha)
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    let mut expand = 0;
    while f_lo > 0.0 || f_hi < 0.0 || f_lo.is_nan() || f_hi.is_nan() {
        expand += 1;
        if expand > 40 {
            return Err(Error::RootFinding { lo: lo.exp(), hi: hi.exp() });
        }
        if f_lo > 0.0 || f_lo.is_nan() {
            lo -= 1.0;
            f_lo = f(lo)?;
        }
        if f_hi < 0.0 || f_hi.is_nan() {
            hi += 1.0;
            f_hi = f(hi)?;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.is_nan() {
            return Err(Error::RootFinding { lo: lo.exp(), hi: hi.exp() });
        }
        if fm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    const W2: TailFamily = TailFamily::Weibull { rho: 2.0 };

    #[test]
    fn hard_core_h_is_log_survival() {
        let h = cumulant_h(&TailFamily::HardCore { p: 0.5 }, 7.0).unwrap();
        assert_eq!(h, 0.5f64.ln());
    }

    #[test]
    fn h_vanishes_at_zero() {
        for fam in
            [W2, TailFamily::DoubleExp { rho: 1.0 }, TailFamily::SquaredDoubleExp, TailFamily::Frechet { rho: 1.0 }]
        {
            assert_eq!(cumulant_h(&fam, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn double_exponential_matches_log_gamma() {
        for rho in [0.5, 1.0, 2.0] {
            let fam = TailFamily::DoubleExp { rho };
            for t in [0.3, 1.0, 4.0, 20.0] {
                let h = cumulant_h(&fam, t).unwrap();
                let exact = statrs::function::gamma::ln_gamma(1.0 + rho * t);
                assert!((h - exact).abs() < 1e-9 * exact.abs().max(1.0), "ρ={rho} t={t}: {h} vs {exact}");
            }
        }
    }

    #[test]
    fn weibull_two_has_saddle_point_growth() {
        let h = cumulant_h(&W2, 40.0).unwrap();
        let ratio = h / (40.0f64 * 40.0 / 4.0);
        assert!((ratio - 1.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn weibull_two_against_closed_form() {
        // E e^{t√E} = 1 + t·e^{t²/4}·√π·Φ(t/√2) with Φ the standard normal CDF.
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for t in [0.5, 1.0, 3.0, 6.0] {
            let exact: f64 =
                (1.0 + t * (t * t / 4.0f64).exp() * std::f64::consts::PI.sqrt() * n.cdf(t / 2f64.sqrt())).ln();
            let h = cumulant_h(&W2, t).unwrap();
            assert!((h - exact).abs() < 1e-10, "t={t}: {h} vs {exact}");
        }
    }

    #[test]
    fn hard_core_g_is_constant() {
        let fam = TailFamily::HardCore { p: 0.3 };
        for t in [0.5, 2.0, 9.0] {
            for theta in [-0.5, 0.25, 1.0] {
                let g = cumulant_g(&fam, theta, t).unwrap();
                assert!((g + 0.7f64.ln()).abs() < 1e-14, "{g}");
            }
        }
    }

    #[test]
    fn g_small_theta_approaches_legendre_form() {
        let t: f64 = 10.0;
        let g = cumulant_g(&W2, 1e-3, t).unwrap();
        let dh = 1e-4;
        let deriv = (cumulant_h(&W2, t + dh).unwrap() - cumulant_h(&W2, t - dh).unwrap()) / (2.0 * dh);
        let limit = t * deriv - cumulant_h(&W2, t).unwrap();
        assert!((g - limit).abs() / limit < 2e-3, "{g} vs {limit}");
    }

    #[test]
    fn theta_domain() {
        assert!(cumulant_g(&W2, 0.0, 1.0).is_err());
        assert!(cumulant_g(&W2, -1.0, 1.0).is_err());
    }

    #[test]
    fn exponent_values() {
        let w = transition_exponents(&W2, 1).unwrap();
        assert_eq!((w.gamma1, w.gamma2), (1.0, 4.0));
        let d = transition_exponents(&TailFamily::DoubleExp { rho: 1.0 }, 1).unwrap();
        assert_eq!((d.gamma1, d.gamma2), (1.0, 2.0));
        let f = transition_exponents(&TailFamily::Frechet { rho: 1.0 }, 1).unwrap();
        assert!((f.gamma1 - 0.04).abs() < 1e-15);
        let hc = transition_exponents(&TailFamily::HardCore { p: 0.5 }, 2).unwrap();
        assert!(hc.empirical_only);
        assert_eq!(hc.growth.unknown_constant(), Some("c2"));
    }

    #[test]
    fn weibull_gamma2_uses_the_two_to_rho_prime_factor() {
        // The alternative closed form 2^{1-γ₁}·γ₁ evaluates to γ₁ itself at
        // ρ = 2 (γ₁ = 1), which would merge the two transitions. The
        // implemented γ₂ = 2^{ρ/(ρ-1)}·γ₁ keeps them apart.
        for rho in [1.5, 2.0, 3.0] {
            let tab = transition_exponents(&TailFamily::Weibull { rho }, 1).unwrap();
            let alternative = 2f64.powf(1.0 - tab.gamma1) * tab.gamma1;
            assert!((tab.gamma2 - 2f64.powf(rho / (rho - 1.0)) * tab.gamma1).abs() < 1e-14);
            assert!(tab.gamma2 > alternative);
        }
        let tab = transition_exponents(&W2, 1).unwrap();
        assert_eq!(2f64.powf(1.0 - tab.gamma1) * tab.gamma1, tab.gamma1);
    }

    #[test]
    fn critical_functions() {
        assert!((critical_a(&W2, 1, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let aw = critical_a(&W2, 1, 0.5).unwrap();
        assert!((aw - 0.914_213_562_373_095_1).abs() < 1e-14);
        for (rho, d) in [(1.0, 1), (0.5, 2), (3.0, 3)] {
            let fam = TailFamily::Frechet { rho };
            let g1 = transition_exponents(&fam, d).unwrap().gamma1;
            assert!((critical_a(&fam, d, g1).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(critical_a(&W2, 1, 1.5).is_err());
        assert!(critical_a(&W2, 1, 0.0).is_err());
        // Double exponential: value 1 at γ₁ only for ρ = 1.
        assert!((critical_a(&TailFamily::DoubleExp { rho: 1.0 }, 1, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rate_function_values() {
        assert_eq!(rate_i(0.0), 0.0);
        let expect = (1.0 + 2f64.sqrt()).ln() - 2f64.sqrt() + 1.0;
        assert!((rate_i(1.0) - expect).abs() < 1e-15);
        assert!((rate_i(1.0) - 0.467_160_024_646_447_98).abs() < 1e-12);
        for y in [0.0, 0.3, 2.0, 17.0] {
            assert!((rate_i(rate_i_inverse(rate_i(y))) - rate_i(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_values() {
        assert_eq!(growth_j(&TailFamily::DoubleExp { rho: 1.0 }, 1, 5.0).unwrap().value, 5.0);
        let t = 4f64.exp();
        let j = growth_j(&TailFamily::SquaredDoubleExp, 1, t).unwrap().value;
        assert!((j - t / 4.0).abs() < 1e-12);
        let jw = growth_j(&W2, 1, 3.0).unwrap().value;
        assert_eq!(jw, cumulant_h(&W2, 3.0).unwrap());
        assert!(growth_j(&TailFamily::SquaredDoubleExp, 1, 2.0).is_err());
    }

    #[test]
    fn frechet_scale_solves_its_equation() {
        let fam = TailFamily::Frechet { rho: 1.0 };
        for t in [10.0, 100.0, 1000.0] {
            let a = scale_function(&fam, 1, t).unwrap();
            let s = t / a;
            let k = second_difference(&fam, s).unwrap();
            assert!((k / s * a * a - 1.0).abs() < 1e-8, "t={t} α={a}");
        }
        let g = growth_j(&fam, 1, 100.0).unwrap();
        assert_eq!(g.unknown_constant, Some("chi"));
        assert!(g.value > 0.0);
    }
}
