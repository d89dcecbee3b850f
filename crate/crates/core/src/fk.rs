//! Feynman–Kac Monte Carlo for quenched moments and exit-time tails of the
//! continuous-time simple random walk.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::rate_i;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::Cube;
use crate::operator::BoxDomain;
use crate::output::{fmt_f64, write_table};
use crate::rng::stream;
use crate::stats::{wilson, Interval};

/// Continuous-time simple symmetric walk on `Z^d` with jump rate `κ` per
/// neighbour (total `2dκ`).
#[derive(Debug, Clone, Copy)]
pub struct Walker {
    dim: usize,
    holding: Exp<f64>,
}

impl Walker {
    pub fn new(dim: usize, kappa: f64) -> Result<Self> {
        if dim == 0 || !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("walker needs d ≥ 1 and κ > 0, got d={dim}, κ={kappa}")));
        }
        let holding = Exp::new(2.0 * dim as f64 * kappa).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { dim, holding })
    }

    /// Holding time and direction index in `0..2d` (`2i` is `+e_i`, `2i+1` is `−e_i`).
    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, usize) {
        (self.holding.sample(rng), rng.gen_range(0..2 * self.dim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkEstimate {
    /// `log( n^{-1} Σ W_i )`, `−∞` if every path was killed.
    pub log_mean: f64,
    /// Delta-method standard error of `log_mean`.
    pub stderr: f64,
    pub n_paths: usize,
    pub n_killed: usize,
    pub all_killed: bool,
}

/// Log weights `∫₀ᵗ v(X_s) ds` of `n_paths` walks from `x`, or `−∞` for killed
/// paths. Path `i` uses its own stream, so different boxes see common random
/// numbers.
pub fn path_log_weights(
    env: &Environment,
    x: &[i64],
    kappa: f64,
    t: f64,
    domain: Option<&BoxDomain>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t.is_finite()) || !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("need t ≥ 0 and κ ≥ 0, got t={t}, κ={kappa}")));
    }
    let region: &Cube = match domain {
        Some(d) => {
            if !d.cube.inside(&env.window) {
                return Err(Error::WindowTooSmall {
                    needed: crate::lattice::sup_norm(&d.cube.center) as usize + d.cube.radius,
                    available: env.radius(),
                });
            }
            &d.cube
        }
        None => &env.window,
    };
    if !region.contains(x) {
        return Err(Error::invalid(format!("start {x:?} lies outside the domain")));
    }
    let start = env.index_of(x).expect("region inside window");
    if env.hard_core[start] {
        return Ok(vec![f64::NEG_INFINITY; n_paths]);
    }
    if kappa == 0.0 || t == 0.0 {
        return Ok(vec![env.v(start) * t; n_paths]);
    }
    let walker = Walker::new(env.dim(), kappa)?;
    Ok((0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(seed, "fk-path", p as u64);
            let mut pos = x.to_vec();
            let mut idx = start;
            let mut s = 0.0;
            let mut logw = 0.0;
            loop {
                let (hold, dir) = walker.step(&mut rng);
                if s + hold >= t {
                    return logw + env.v(idx) * (t - s);
                }
                logw += env.v(idx) * hold;
                s += hold;
                pos[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
                if !region.contains(&pos) {
                    return f64::NEG_INFINITY;
                }
                idx = env.index_of(&pos).expect("region inside window");
                if env.hard_core[idx] {
                    return f64::NEG_INFINITY;
                }
            }
        })
        .collect())
}

pub fn fk_estimate(
    env: &Environment,
    x: &[i64],
    kappa: f64,
    t: f64,
    domain: Option<&BoxDomain>,
    n_paths: usize,
    seed: u64,
) -> Result<FkEstimate> {
    if n_paths < 100 {
        return Err(Error::invalid(format!("n_paths must be ≥ 100, got {n_paths}")));
    }
    let logs = path_log_weights(env, x, kappa, t, domain, n_paths, seed)?;
    Ok(summarize_log_weights(&logs))
}

/// Mean and delta-method standard error of `log mean(exp(logs))`.
pub fn summarize_log_weights(logs: &[f64]) -> FkEstimate {
    let n = logs.len();
    let n_killed = logs.iter().filter(|l| **l == f64::NEG_INFINITY).count();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return FkEstimate { log_mean: f64::NEG_INFINITY, stderr: 0.0, n_paths: n, n_killed, all_killed: true };
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    FkEstimate {
        log_mean: mean.ln() + top,
        stderr: (var / n as f64).sqrt() / mean,
        n_paths: n,
        n_killed,
        all_killed: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTail {
    pub x: u64,
    pub t: f64,
    pub p_hat: f64,
    /// Two-sided 95% Wilson interval; `ci.hi` is the 97.5% upper limit.
    pub ci: Interval,
    /// `4 exp(−2κt I(x/(2κt)))`.
    pub bound: f64,
}

impl ExitTail {
    pub fn within_bound(&self) -> bool {
        self.ci.hi <= self.bound
    }
}

/// `P[τ_x < t]` for one coordinate of the walk (a rate-`2κ` walk on `Z`),
/// `τ_x = inf{s : |X_s| ≥ x}`.
///
/// Only the number of jumps before `t` matters, so each path draws
/// `N ~ Poisson(2κt)` and `N` signs.
pub fn exit_tail_mc(kappa: f64, dim: usize, x: u64, t: f64, n_paths: usize, seed: u64) -> Result<ExitTail> {
    if !(kappa > 0.0) || dim == 0 || !(t >= 0.0) || n_paths == 0 {
        return Err(Error::invalid("exit_tail_mc needs κ > 0, d ≥ 1, t ≥ 0, n_paths ≥ 1"));
    }
    let bound = exit_bound(kappa, x, t);
    let hits = if x == 0 {
        n_paths as u64
    } else if t == 0.0 {
        0
    } else {
        let pois = Poisson::new(2.0 * kappa * t).map_err(|e| Error::invalid(e.to_string()))?;
        (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(seed, "exit-path", p as u64);
                let n = pois.sample(&mut rng) as u64;
                let mut pos: i64 = 0;
                for _ in 0..n {
                    pos += if rng.gen::<bool>() { 1 } else { -1 };
                    if pos.unsigned_abs() >= x {
                        return 1u64;
                    }
                }
                0
            })
            .sum()
    };
    Ok(ExitTail {
        x,
        t,
        p_hat: hits as f64 / n_paths as f64,
        ci: wilson(hits, n_paths as u64, 1.959963984540054),
        bound,
    })
}

pub fn exit_bound(kappa: f64, x: u64, t: f64) -> f64 {
    if t == 0.0 {
        return if x == 0 { 4.0 } else { 0.0 };
    }
    let kt2 = 2.0 * kappa * t;
    4.0 * (-kt2 * rate_i(x as f64 / kt2)).exp()
}

/// One row of `fk.csv`.
#[derive(Debug, Clone)]
pub struct FkRow {
    pub x: Vec<i64>,
    pub estimate: FkEstimate,
}

pub fn write_fk(path: &Path, rows: &[FkRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
                fmt_f64(r.estimate.log_mean),
                fmt_f64(r.estimate.stderr),
                r.estimate.n_paths.to_string(),
                r.estimate.n_killed.to_string(),
            ]
        })
        .collect();
    write_table(path, &["x", "log_mean", "stderr", "n_paths", "n_killed"], &body)
}
