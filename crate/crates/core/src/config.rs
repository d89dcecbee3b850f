//! Flat key-value run configuration (TOML syntax, no nested tables).
//!
//! Every key is validated before any computation and all problems are
//! reported together.

use serde::Serialize;

use crate::env::TailFamily;
use crate::error::{Error, Result};
use crate::pam::SolveMethod;
use crate::regime::{LSchedule, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub family: Option<TailFamily>,
    pub d: usize,
    pub kappa: f64,
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub schedule: Option<LSchedule>,
    pub l: Vec<u64>,
    pub replicas: usize,
    pub seed: u64,
    pub tol: f64,
    pub out_dir: String,
    pub threads: Option<usize>,
    pub method: SolveMethod,
    /// Box radius for truncated solves, FK, particles and spectral checks.
    pub radius: usize,
    /// Radius of the sampled environment window (defaults per command).
    pub env_radius: Option<usize>,
    pub env_file: Option<String>,
    /// Start sites, one per row, each of length `d`.
    pub x: Vec<Vec<i64>>,
    pub n_paths: usize,
    pub n_runs: usize,
    pub v_plus_max: Option<f64>,
    pub experiment: String,
    pub gamma: Option<f64>,
    pub delta: f64,
    pub a: f64,
    pub y: Vec<i64>,
    pub max_l: f64,
    pub exit_x: Vec<u64>,
    pub l_prime: Option<usize>,
    pub fine_r: Option<usize>,
    pub expect: Option<String>,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: None,
            d: 1,
            kappa: 0.0,
            t: vec![1.0],
            theta: vec![0.5],
            schedule: None,
            l: Vec::new(),
            replicas: 200,
            seed: 1,
            tol: 1e-8,
            out_dir: "out".into(),
            threads: None,
            method: SolveMethod::Auto,
            radius: 4,
            env_radius: None,
            env_file: None,
            x: Vec::new(),
            n_paths: 10_000,
            n_runs: 1000,
            v_plus_max: None,
            experiment: "lln".into(),
            gamma: None,
            delta: 0.1,
            a: 1.5,
            y: Vec::new(),
            max_l: 1e12,
            exit_x: Vec::new(),
            l_prime: None,
            fine_r: None,
            expect: None,
            thresholds: Thresholds::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "family",
    "rho",
    "p",
    "d",
    "kappa",
    "t",
    "theta",
    "schedule",
    "l",
    "gamma",
    "f_epsilon_t",
    "f_epsilon",
    "replicas",
    "seed",
    "tol",
    "out_dir",
    "threads",
    "method",
    "radius",
    "env_radius",
    "env_file",
    "x",
    "n_paths",
    "n_runs",
    "v_plus_max",
    "experiment",
    "delta",
    "a",
    "y",
    "max_l",
    "exit_x",
    "l_prime",
    "fine_r",
    "expect",
    "band",
    "fraction",
    "below",
    "skew_max",
    "kurt_max",
    "ks_p_min",
    "degenerate_median",
];

/// Parse a document; `overrides` are `key=value` strings applied on top.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_with_overrides(text, &[])
}

pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    let mut errs = Vec::new();
    for o in overrides {
        match o.split_once('=') {
            Some((k, v)) => {
                let k = k.trim();
                let v = v.trim();
                let value = format!("v = {v}")
                    .parse::<toml::Table>()
                    .ok()
                    .and_then(|mut t| t.remove("v"))
                    .unwrap_or_else(|| toml::Value::String(v.to_string()));
                table.insert(k.to_string(), value);
            }
            None => errs.push(format!("override {o:?} is not of the form key=value")),
        }
    }
    let mut cfg = RunConfig::default();
    let mut fam: Option<String> = None;
    let mut rho: Option<f64> = None;
    let mut p: Option<f64> = None;
    let mut sched: Option<String> = None;
    let mut f_eps_t: Vec<f64> = Vec::new();
    let mut f_eps: Vec<f64> = Vec::new();
    for (key, value) in &table {
        let mut e = |msg: String| errs.push(format!("{key}: {msg}"));
        match key.as_str() {
            "family" => fam = as_str(value).map_err(&mut e).ok(),
            "rho" => rho = as_f64(value).map_err(&mut e).ok(),
            "p" => p = as_f64(value).map_err(&mut e).ok(),
            "d" => set(&mut cfg.d, as_usize(value).and_then(min1), &mut e),
            "kappa" => set(&mut cfg.kappa, as_f64(value).and_then(nonneg), &mut e),
            "t" => set(&mut cfg.t, as_f64_list(value).and_then(|v| all(v, nonneg)), &mut e),
            "theta" => set(&mut cfg.theta, as_f64_list(value).and_then(|v| all(v, theta_ok)), &mut e),
            "schedule" => sched = as_str(value).map_err(&mut e).ok(),
            "l" => set(
                &mut cfg.l,
                as_u64_list(value).and_then(|v| all(v, |l| if l >= 1 { Ok(l) } else { Err("L must be ≥ 1".into()) })),
                &mut e,
            ),
            "gamma" => set(&mut cfg.gamma, as_f64(value).and_then(nonneg).map(Some), &mut e),
            "f_epsilon_t" => set(&mut f_eps_t, as_f64_list(value), &mut e),
            "f_epsilon" => set(&mut f_eps, as_f64_list(value), &mut e),
            "replicas" => set(&mut cfg.replicas, as_usize(value).and_then(min1), &mut e),
            "seed" => set(&mut cfg.seed, as_u64(value), &mut e),
            "tol" => set(
                &mut cfg.tol,
                as_f64(value).and_then(|x| if x > 0.0 && x < 1.0 { Ok(x) } else { Err("0<tol<1 required".into()) }),
                &mut e,
            ),
            "out_dir" => set(&mut cfg.out_dir, as_str(value), &mut e),
            "threads" => set(&mut cfg.threads, as_usize(value).and_then(min1).map(Some), &mut e),
            "method" => {
                set(&mut cfg.method, as_str(value).and_then(|s| s.parse().map_err(|e: Error| e.to_string())), &mut e)
            }
            "radius" => set(&mut cfg.radius, as_usize(value), &mut e),
            "env_radius" => set(&mut cfg.env_radius, as_usize(value).map(Some), &mut e),
            "env_file" => set(&mut cfg.env_file, as_str(value).map(Some), &mut e),
            "x" => set(&mut cfg.x, as_sites(value), &mut e),
            "n_paths" => set(
                &mut cfg.n_paths,
                as_usize(value).and_then(|n| if n >= 100 { Ok(n) } else { Err("n_paths ≥ 100 required".into()) }),
                &mut e,
            ),
            "n_runs" => set(&mut cfg.n_runs, as_usize(value).and_then(min1), &mut e),
            "v_plus_max" => set(&mut cfg.v_plus_max, as_f64(value).and_then(nonneg).map(Some), &mut e),
            "experiment" => set(
                &mut cfg.experiment,
                as_str(value).and_then(|s| match s.as_str() {
                    "lln" | "clt" | "critical" => Ok(s),
                    _ => Err(format!("unknown experiment {s:?} (lln, clt, critical)")),
                }),
                &mut e,
            ),
            "delta" => set(&mut cfg.delta, as_f64(value), &mut e),
            "a" => set(
                &mut cfg.a,
                as_f64(value).and_then(|a| if a > 1.0 { Ok(a) } else { Err("a>1 required".into()) }),
                &mut e,
            ),
            "y" => set(&mut cfg.y, as_i64_list(value), &mut e),
            "max_l" => set(
                &mut cfg.max_l,
                as_f64(value).and_then(|m| if m >= 1.0 { Ok(m) } else { Err("max_l ≥ 1 required".into()) }),
                &mut e,
            ),
            "exit_x" => set(&mut cfg.exit_x, as_u64_list(value), &mut e),
            "l_prime" => set(&mut cfg.l_prime, as_usize(value).and_then(min1).map(Some), &mut e),
            "fine_r" => set(&mut cfg.fine_r, as_usize(value).map(Some), &mut e),
            "expect" => set(&mut cfg.expect, as_str(value).map(Some), &mut e),
            "band" => set(&mut cfg.thresholds.band, as_f64(value).and_then(nonneg), &mut e),
            "fraction" => set(&mut cfg.thresholds.fraction, as_f64(value).and_then(unit), &mut e),
            "below" => set(&mut cfg.thresholds.below, as_f64(value).and_then(nonneg), &mut e),
            "skew_max" => set(&mut cfg.thresholds.skew, as_f64(value).and_then(nonneg), &mut e),
            "kurt_max" => set(&mut cfg.thresholds.kurt, as_f64(value).and_then(nonneg), &mut e),
            "ks_p_min" => set(&mut cfg.thresholds.ks_p, as_f64(value).and_then(unit), &mut e),
            "degenerate_median" => set(&mut cfg.thresholds.degenerate_median, as_f64(value).and_then(nonneg), &mut e),
            _ => e("unknown key".into()),
        }
    }

    if let Some(name) = fam {
        let need = |v: Option<f64>, what: &str, errs: &mut Vec<String>| {
            if v.is_none() {
                errs.push(format!("family {name}: missing `{what}`"));
            }
            v.unwrap_or(f64::NAN)
        };
        let family = match name.as_str() {
            "weibull" => Some(TailFamily::Weibull { rho: need(rho, "rho", &mut errs) }),
            "double_exp" => Some(TailFamily::DoubleExp { rho: need(rho, "rho", &mut errs) }),
            "squared_double_exp" => Some(TailFamily::SquaredDoubleExp),
            "frechet" => Some(TailFamily::Frechet { rho: need(rho, "rho", &mut errs) }),
            "hard_core" => Some(TailFamily::HardCore { p: need(p, "p", &mut errs) }),
            other => {
                errs.push(format!("family: unknown family {other:?}"));
                None
            }
        };
        if let Some(f) = family {
            let has_rho =
                matches!(f, TailFamily::Weibull { .. } | TailFamily::DoubleExp { .. } | TailFamily::Frechet { .. });
            if rho.is_some() && !has_rho {
                errs.push(format!("rho: not a parameter of {name}"));
            }
            if p.is_some() && !matches!(f, TailFamily::HardCore { .. }) {
                errs.push(format!("p: not a parameter of {name}"));
            }
            match f.validate() {
                Ok(()) => cfg.family = Some(f),
                Err(Error::InvalidParameter(m)) if !m.contains("NaN") => errs.push(m),
                Err(_) => {}
            }
        }
    } else if rho.is_some() || p.is_some() {
        errs.push("rho/p given without `family`".into());
    }

    for (i, site) in cfg.x.iter().enumerate() {
        if site.len() != cfg.d {
            errs.push(format!("x: site {i} has {} coordinates, expected d = {}", site.len(), cfg.d));
        }
    }
    cfg.schedule = match sched.as_deref() {
        None => None,
        Some("explicit") => {
            if cfg.l.is_empty() {
                errs.push("schedule: explicit needs `l`".into());
            }
            Some(LSchedule::Explicit { values: cfg.l.clone() })
        }
        Some("gamma_j") => match cfg.gamma {
            Some(gamma) => Some(LSchedule::GammaJ { gamma }),
            None => {
                errs.push("schedule: gamma_j needs `gamma`".into());
                None
            }
        },
        Some("f_epsilon") => {
            if f_eps.len() != f_eps_t.len() || f_eps.is_empty() {
                errs.push("schedule: f_epsilon needs equal-length `f_epsilon_t` and `f_epsilon`".into());
            }
            Some(LSchedule::FEpsilon { table: f_eps_t.iter().copied().zip(f_eps.iter().copied()).collect() })
        }
        Some(other) => {
            errs.push(format!("schedule: unknown rule {other:?} (explicit, gamma_j, f_epsilon)"));
            None
        }
    };
    if errs.is_empty() {
        Ok(cfg)
    } else {
        errs.sort();
        Err(Error::Config(errs))
    }
}

fn set<T>(slot: &mut T, value: std::result::Result<T, String>, err: &mut impl FnMut(String)) {
    match value {
        Ok(v) => *slot = v,
        Err(m) => err(m),
    }
}

fn as_str(v: &toml::Value) -> std::result::Result<String, String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("expected a string, got {v}"))
}

fn as_f64(v: &toml::Value) -> std::result::Result<f64, String> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(format!("expected a number, got {v}")),
    }
}

fn as_u64(v: &toml::Value) -> std::result::Result<u64, String> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(format!("expected a nonnegative integer, got {v}")),
    }
}

fn as_usize(v: &toml::Value) -> std::result::Result<usize, String> {
    as_u64(v).map(|x| x as usize)
}

fn as_list<T>(
    v: &toml::Value,
    f: fn(&toml::Value) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    match v {
        toml::Value::Array(a) => a.iter().map(f).collect(),
        other => f(other).map(|x| vec![x]),
    }
}

fn as_f64_list(v: &toml::Value) -> std::result::Result<Vec<f64>, String> {
    as_list(v, as_f64)
}

fn as_u64_list(v: &toml::Value) -> std::result::Result<Vec<u64>, String> {
    as_list(v, as_u64)
}

fn as_i64(v: &toml::Value) -> std::result::Result<i64, String> {
    v.as_integer().ok_or_else(|| format!("expected an integer, got {v}"))
}

fn as_i64_list(v: &toml::Value) -> std::result::Result<Vec<i64>, String> {
    as_list(v, as_i64)
}

/// A single site `[x1, …]` or a list of sites `[[…], […]]`.
fn as_sites(v: &toml::Value) -> std::result::Result<Vec<Vec<i64>>, String> {
    match v {
        toml::Value::Array(a) if a.iter().all(|e| e.is_array()) => a.iter().map(as_i64_list).collect(),
        other => as_i64_list(other).map(|s| vec![s]),
    }
}

fn min1(x: usize) -> std::result::Result<usize, String> {
    if x >= 1 {
        Ok(x)
    } else {
        Err("must be ≥ 1".into())
    }
}

fn nonneg(x: f64) -> std::result::Result<f64, String> {
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be finite and ≥ 0, got {x}"))
    }
}

fn unit(x: f64) -> std::result::Result<f64, String> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must lie in [0, 1], got {x}"))
    }
}

fn theta_ok(x: f64) -> std::result::Result<f64, String> {
    if x > -1.0 && x != 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("θ > −1 and θ ≠ 0 required, got {x}"))
    }
}

fn all<T: Copy>(v: Vec<T>, f: impl Fn(T) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.into_iter().map(f).collect()
}
