//! Random environments: the potential families, per-site sampling and the
//! split of the effective potential into branching and annihilation rates.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Cube;
use crate::output::fmt_f64;
use crate::rng::{open_uniform, site_seed};

/// Law of the effective potential `v(0)`, written as a nondecreasing function
/// of an `Exp(1)` variable `s`, i.e. `v = g(s)` with `u = 1 - e^{-s}`.
///
/// Working in `s` instead of the quantile level `u` keeps the far upper tail
/// resolvable: levels like `1 - e^{-1600}` are not representable as `f64`.
pub trait PotentialLaw: Send + Sync {
    fn potential_at_exp(&self, s: f64) -> f64;

    /// Points in `s` where `g` is not smooth (jumps or kinks).
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `log <e^{v(0) t}>`.
    fn cumulant_h(&self, t: f64) -> Result<f64> {
        crate::quadrature::log_laplace(|s| self.potential_at_exp(s), &self.breakpoints(), t).map(|q| q.value)
    }

    fn quantile(&self, u: f64) -> f64 {
        self.potential_at_exp(-(-u).ln_1p())
    }
}

/// The five potential families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailFamily {
    /// `μ[v > x] = exp(-x^ρ)` for `x > 0`, `ρ > 1`.
    Weibull { rho: f64 },
    /// `μ[v > x] = exp(-e^{x/ρ})` on all of `R`.
    DoubleExp { rho: f64 },
    /// `μ[v > x] = exp(-e^{x²})` for `x ≥ 0`; the remaining mass sits at 0.
    SquaredDoubleExp,
    /// `μ[v > -x] = exp(-x^{-ρ})` for `x > 0`; essential supremum 0.
    Frechet { rho: f64 },
    /// `v = -∞` with probability `p`, else `v = 0`.
    HardCore { p: f64 },
}

impl TailFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TailFamily::Weibull { rho } if !(rho > 1.0 && rho.is_finite()) => {
                Err(Error::invalid(format!("weibull: ρ>1 required, got {rho}")))
            }
            TailFamily::DoubleExp { rho } if !(rho > 0.0 && rho.is_finite()) => {
                Err(Error::invalid(format!("double_exp: ρ>0 required, got {rho}")))
            }
            TailFamily::Frechet { rho } if !(rho > 0.0 && rho.is_finite()) => {
                Err(Error::invalid(format!("frechet: ρ>0 required, got {rho}")))
            }
            TailFamily::HardCore { p } if !(p > 0.0 && p < 1.0) => {
                Err(Error::invalid(format!("hard_core: 0<p<1 required, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TailFamily::Weibull { .. } => "weibull",
            TailFamily::DoubleExp { .. } => "double_exp",
            TailFamily::SquaredDoubleExp => "squared_double_exp",
            TailFamily::Frechet { .. } => "frechet",
            TailFamily::HardCore { .. } => "hard_core",
        }
    }

    /// Parameters as `key=value` pairs joined by `;`.
    pub fn params_string(&self) -> String {
        match self {
            TailFamily::Weibull { rho } | TailFamily::DoubleExp { rho } | TailFamily::Frechet { rho } => {
                format!("rho={rho}")
            }
            TailFamily::SquaredDoubleExp => String::new(),
            TailFamily::HardCore { p } => format!("p={p}"),
        }
    }

    /// `μ[v(0) > x]`.
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            TailFamily::Weibull { rho } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x.powf(rho)).exp()
                }
            }
            TailFamily::DoubleExp { rho } => (-(x / rho).exp()).exp(),
            TailFamily::SquaredDoubleExp => {
                if x < 0.0 {
                    1.0
                } else {
                    (-(x * x).exp()).exp()
                }
            }
            TailFamily::Frechet { rho } => {
                if x >= 0.0 {
                    0.0
                } else {
                    (-(-x).powf(-rho)).exp()
                }
            }
            TailFamily::HardCore { p } => {
                if x < 0.0 {
                    1.0 - p
                } else {
                    0.0
                }
            }
        }
    }

    /// `μ[v(0) ≤ x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    pub fn is_hard_core(&self) -> bool {
        matches!(self, TailFamily::HardCore { .. })
    }
}

impl fmt::Display for TailFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params = self.params_string();
        if params.is_empty() {
            write!(f, "{}", self.name())
        } else {
            write!(f, "{}({})", self.name(), params)
        }
    }
}

impl PotentialLaw for TailFamily {
    fn potential_at_exp(&self, s: f64) -> f64 {
        match *self {
            TailFamily::Weibull { rho } => s.powf(1.0 / rho),
            TailFamily::DoubleExp { rho } => rho * s.ln(),
            TailFamily::SquaredDoubleExp => {
                if s >= 1.0 {
                    s.ln().sqrt()
                } else {
                    0.0
                }
            }
            TailFamily::Frechet { rho } => -s.powf(-1.0 / rho),
            TailFamily::HardCore { p } => {
                if s < -(-p).ln_1p() {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TailFamily::SquaredDoubleExp => vec![1.0],
            TailFamily::HardCore { p } => vec![-(-p).ln_1p()],
            _ => Vec::new(),
        }
    }

    fn cumulant_h(&self, t: f64) -> Result<f64> {
        crate::analytics::cumulant_h(self, t)
    }
}

/// Inverse CDF of `family` at level `u ∈ (0,1)`; the hard-core atom occupies
/// the lowest levels `u < p`.
pub fn tail_quantile(family: &TailFamily, u: f64) -> Result<f64> {
    family.validate()?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0,1), got {u}")));
    }
    if let TailFamily::HardCore { p } = *family {
        return Ok(if u < p { f64::NEG_INFINITY } else { 0.0 });
    }
    Ok(family.quantile(u))
}

/// Options controlling the split `v = v₊ − v₋`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplitOptions {
    /// Uniform rate added to both `v₊` and `v₋` (leaves `v` unchanged).
    pub baseline: f64,
}

/// A finite window `Λ_R` of per-site rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub family: Option<TailFamily>,
    pub seed: u64,
    pub window: Cube,
    pub baseline: f64,
    /// Finite annihilation rates; hard-core sites are marked in `hard_core`.
    pub v_minus: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub hard_core: Vec<bool>,
}

/// Draw an i.i.d. environment on `Λ_radius ⊂ Z^dim`.
pub fn sample_environment(family: TailFamily, dim: usize, radius: usize, seed: u64) -> Result<Environment> {
    sample_environment_with(family, dim, radius, seed, SplitOptions::default())
}

pub fn sample_environment_with(
    family: TailFamily,
    dim: usize,
    radius: usize,
    seed: u64,
    opts: SplitOptions,
) -> Result<Environment> {
    family.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(opts.baseline >= 0.0 && opts.baseline.is_finite()) {
        return Err(Error::invalid("baseline death rate must be finite and nonnegative"));
    }
    let window = Cube::centered(dim, radius);
    let values: Vec<f64> = (0..window.len())
        .into_par_iter()
        .map(|i| {
            let u = open_uniform(site_seed(seed, &window.coords_of(i)));
            match family {
                TailFamily::HardCore { p } => {
                    if u < p {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                }
                _ => family.quantile(u),
            }
        })
        .collect();
    let mut env = Environment::from_potential(window, &values, opts)?;
    env.family = Some(family);
    env.seed = seed;
    Ok(env)
}

impl Environment {
    /// Build an environment from explicit potential values (`-∞` = hard core).
    pub fn from_potential(window: Cube, values: &[f64], opts: SplitOptions) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::invalid(format!("expected {} site values, got {}", window.len(), values.len())));
        }
        let n = values.len();
        let mut v_plus = Vec::with_capacity(n);
        let mut v_minus = Vec::with_capacity(n);
        let mut hard_core = Vec::with_capacity(n);
        for &v in values {
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::invalid(format!("potential value {v} not allowed")));
            }
            if v == f64::NEG_INFINITY {
                v_plus.push(opts.baseline);
                v_minus.push(0.0);
                hard_core.push(true);
            } else {
                v_plus.push(v.max(0.0) + opts.baseline);
                v_minus.push((-v).max(0.0) + opts.baseline);
                hard_core.push(false);
            }
        }
        Ok(Self { family: None, seed: 0, window, baseline: opts.baseline, v_minus, v_plus, hard_core })
    }

    pub fn from_rates(window: Cube, v_minus: Vec<f64>, v_plus: Vec<f64>, hard_core: Vec<bool>) -> Result<Self> {
        let n = window.len();
        if v_minus.len() != n || v_plus.len() != n || hard_core.len() != n {
            return Err(Error::invalid("rate arrays do not match the window size"));
        }
        if v_plus.iter().chain(&v_minus).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("rates must be finite and nonnegative"));
        }
        Ok(Self { family: None, seed: 0, window, baseline: 0.0, v_minus, v_plus, hard_core })
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn radius(&self) -> usize {
        self.window.radius
    }

    pub fn len(&self) -> usize {
        self.v_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_plus.is_empty()
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        self.window.index_of(x)
    }

    /// Effective potential at a window index (`-∞` on hard-core sites).
    pub fn v(&self, i: usize) -> f64 {
        if self.hard_core[i] {
            f64::NEG_INFINITY
        } else {
            self.v_plus[i] - self.v_minus[i]
        }
    }

    pub fn v_at(&self, x: &[i64]) -> Option<f64> {
        self.index_of(x).map(|i| self.v(i))
    }

    pub fn is_hard_core(&self, x: &[i64]) -> bool {
        self.index_of(x).map(|i| self.hard_core[i]).unwrap_or(false)
    }

    /// Hard-core set `{x : v₋(x) = ∞}` as window indices.
    pub fn hard_core_sites(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.hard_core[i]).collect()
    }

    /// Copy with `v₊` capped at `max_v_plus` (`v₋` untouched).
    pub fn clip_v_plus(&self, max_v_plus: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.v_plus {
            *r = r.min(max_v_plus);
        }
        out
    }

    /// Restriction to a sub-box (must lie inside the window).
    pub fn restrict(&self, cube: &Cube) -> Result<Self> {
        if !cube.inside(&self.window) {
            return Err(Error::WindowTooSmall { needed: needed_radius(cube), available: self.window.radius });
        }
        let idx: Vec<usize> = cube.iter().map(|x| self.index_of(&x).expect("inside")).collect();
        Ok(Self {
            family: self.family,
            seed: self.seed,
            window: cube.clone(),
            baseline: self.baseline,
            v_minus: idx.iter().map(|&i| self.v_minus[i]).collect(),
            v_plus: idx.iter().map(|&i| self.v_plus[i]).collect(),
            hard_core: idx.iter().map(|&i| self.hard_core[i]).collect(),
        })
    }
}

fn needed_radius(cube: &Cube) -> usize {
    cube.center.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0) + cube.radius
}

/// Per-site `v(x) = v₊(x) − v₋(x) ∈ [−∞, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePotential {
    pub window: Cube,
    pub values: Vec<f64>,
}

pub fn effective_potential(env: &Environment) -> EffectivePotential {
    EffectivePotential { window: env.window.clone(), values: (0..env.len()).map(|i| env.v(i)).collect() }
}

/// JSON header stored next to the columnar CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentHeader {
    pub family: Option<TailFamily>,
    pub seed: u64,
    pub dim: usize,
    pub radius: usize,
    pub baseline: f64,
}

/// Write `env` as CSV (`x0..x{d-1}, v_minus, v_plus, hardcore`) plus a JSON header.
pub fn write_environment(env: &Environment, csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = (0..env.dim()).map(|k| format!("x{k}")).collect();
    header.extend(["v_minus", "v_plus", "hardcore"].map(String::from));
    w.write_record(&header)?;
    for (i, x) in env.window.iter().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        rec.push(if env.hard_core[i] { "inf".to_string() } else { fmt_f64(env.v_minus[i]) });
        rec.push(fmt_f64(env.v_plus[i]));
        rec.push(u8::from(env.hard_core[i]).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let head = EnvironmentHeader {
        family: env.family,
        seed: env.seed,
        dim: env.dim(),
        radius: env.radius(),
        baseline: env.baseline,
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&head)? + "\n")?;
    Ok(())
}

pub fn read_environment(csv_path: &Path, json_path: &Path) -> Result<Environment> {
    let head: EnvironmentHeader = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
    let window = Cube::centered(head.dim, head.radius);
    let n = window.len();
    let mut v_minus = vec![0.0; n];
    let mut v_plus = vec![0.0; n];
    let mut hard_core = vec![false; n];
    let mut seen = vec![false; n];
    let mut r = csv::Reader::from_path(csv_path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != head.dim + 3 {
            return Err(Error::invalid(format!("environment row has {} fields", rec.len())));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::invalid(format!("{s}: {e}")));
        let x: Vec<i64> = (0..head.dim)
            .map(|k| rec[k].trim().parse::<i64>().map_err(|e| Error::invalid(e.to_string())))
            .collect::<Result<_>>()?;
        let i = window.index_of(&x).ok_or_else(|| Error::invalid(format!("site {x:?} outside window")))?;
        let hc = rec[head.dim + 2].trim() == "1";
        hard_core[i] = hc;
        v_minus[i] = if hc { 0.0 } else { parse(&rec[head.dim])? };
        v_plus[i] = parse(&rec[head.dim + 1])?;
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("environment file does not cover the whole window"));
    }
    let mut env = Environment::from_rates(window, v_minus, v_plus, hard_core)?;
    env.family = head.family;
    env.seed = head.seed;
    env.baseline = head.baseline;
    Ok(env)
}
