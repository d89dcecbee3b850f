//! Annealed moments across environment replicas: growth function `H₁`,
//! intermittency exponents `F_θ`, correlation profiles and block variances.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{cumulant_g, cumulant_h};
use crate::env::{sample_environment, Environment, TailFamily};
use crate::error::{Error, Result};
use crate::lattice::Cube;
use crate::operator::BoxDomain;
use crate::pam::{solve_truncated, solve_untruncated, truncation_radius, SolveMethod};
use crate::partition::build_partitions;
use crate::rng::{derive_seed, stream};
use crate::stats::{bootstrap_indices, covariance, log_mean_exp, mean, std_dev, Interval};

/// Bootstrap settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 1000, level: 0.95 }
    }
}

/// Environment of replica `r`, a cube of the given radius around the origin.
pub fn replica_environment(family: TailFamily, dim: usize, radius: usize, seed: u64, r: usize) -> Result<Environment> {
    sample_environment(family, dim, radius, derive_seed(seed, "replica", r as u64))
}

/// `log m(0, t)` for each replica (rows) and each time (columns).
pub fn replica_log_moments(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    times: &[f64],
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    family.validate()?;
    let radius = times.iter().map(|&t| truncation_radius(kappa, t, dim, tol)).max().unwrap_or(0);
    let origin = vec![0i64; dim];
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let env = replica_environment(family, dim, radius, seed, r)?;
            times.iter().map(|&t| solve_untruncated(&env, &origin, kappa, t, tol).map(|m| m.ln())).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnealedEstimate {
    pub t: f64,
    pub replicas: usize,
    /// `log( R^{-1} Σ_r m_r(0,t) )`.
    pub h1_hat: f64,
    pub ci: Interval,
    /// `H(t) − 2dκt`.
    pub h_lower: f64,
    /// `H(t)`.
    pub h_upper: f64,
}

impl AnnealedEstimate {
    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci.hi - self.ci.lo)
    }

    /// Point estimate inside the sandwich widened by the CI half-width.
    pub fn within_sandwich(&self) -> bool {
        let w = self.ci_half_width();
        self.h1_hat >= self.h_lower - w && self.h1_hat <= self.h_upper + w
    }
}

pub fn estimate_h1(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    t_grid: &[f64],
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<AnnealedEstimate>> {
    estimate_h1_with(family, kappa, dim, t_grid, replicas, tol, seed, BootstrapOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_h1_with(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    t_grid: &[f64],
    replicas: usize,
    tol: f64,
    seed: u64,
    boot: BootstrapOptions,
) -> Result<Vec<AnnealedEstimate>> {
    if replicas < 50 {
        return Err(Error::invalid(format!("need at least 50 replicas, got {replicas}")));
    }
    let logs = replica_log_moments(family, kappa, dim, t_grid, replicas, tol, seed)?;
    t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let col: Vec<f64> = logs.iter().map(|row| row[j]).collect();
            let mut rng = stream(seed, "bootstrap-h1", j as u64);
            let mut buf = vec![0.0; replicas];
            let ci = bootstrap_indices(replicas, boot.resamples, boot.level, &mut rng, |idx| {
                for (b, &i) in buf.iter_mut().zip(idx) {
                    *b = col[i];
                }
                log_mean_exp(&buf)
            })?;
            let h = cumulant_h(&family, t)?;
            Ok(AnnealedEstimate {
                t,
                replicas,
                h1_hat: log_mean_exp(&col),
                ci,
                h_lower: h - 2.0 * dim as f64 * kappa * t,
                h_upper: h,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FThetaRow {
    pub theta: f64,
    pub t: f64,
    pub f_hat: f64,
    pub ci: Interval,
    /// `G_θ(t)`, equal to `F_θ(t)` when `κ = 0`.
    pub g_exact: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_f_theta(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    theta_grid: &[f64],
    t_grid: &[f64],
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<FThetaRow>> {
    for &th in theta_grid {
        crate::analytics::check_theta(th)?;
    }
    let mut times: Vec<f64> = t_grid.to_vec();
    for &th in theta_grid {
        times.extend(t_grid.iter().map(|t| (1.0 + th) * t));
    }
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    let logs = replica_log_moments(family, kappa, dim, &times, replicas, tol, seed)?;
    let col = |t: f64| -> Vec<f64> {
        let j = times.iter().position(|&s| s == t).expect("time in grid");
        logs.iter().map(|row| row[j]).collect()
    };
    let mut rows = Vec::new();
    let boot = BootstrapOptions::default();
    for (a, &th) in theta_grid.iter().enumerate() {
        for (b, &t) in t_grid.iter().enumerate() {
            let lo = col(t);
            let hi = col((1.0 + th) * t);
            let f = |x: &[f64], y: &[f64]| (log_mean_exp(y) - (1.0 + th) * log_mean_exp(x)) / th;
            let mut rng = stream(seed, "bootstrap-f", (a * t_grid.len() + b) as u64);
            let (mut bx, mut by) = (vec![0.0; replicas], vec![0.0; replicas]);
            let ci = bootstrap_indices(replicas, boot.resamples, boot.level, &mut rng, |idx| {
                for (k, &i) in idx.iter().enumerate() {
                    bx[k] = lo[i];
                    by[k] = hi[i];
                }
                f(&bx, &by)
            })?;
            let g_exact = if kappa == 0.0 { Some(cumulant_g(&family, th, t)?) } else { None };
            rows.push(FThetaRow { theta: th, t, f_hat: f(&lo, &hi), ci, g_exact });
        }
    }
    Ok(rows)
}

/// Box radius `⌈(κt)^a⌉` of the truncated moments `m̃_a`.
pub fn truncated_radius(kappa: f64, t: f64, a: f64) -> usize {
    (kappa * t).powf(a).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub y: i64,
    /// Sample covariance of `m(0,t)` and `m(y,t)`.
    pub c: f64,
    pub c_se: f64,
    /// Sample covariance of the truncated moments `m̃_a`.
    pub c_a: f64,
    pub c_a_se: f64,
    /// Sample correlation of the truncated moments.
    pub corr_a: f64,
    /// Exact `c(0,y,t)` when `κ = 0`.
    pub exact: Option<f64>,
}

fn cov_with_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    (covariance(xs, ys), std_dev(&prods) / (xs.len() as f64).sqrt())
}

/// Covariances along the first axis, `y` given as offsets `(y, 0, …, 0)`.
#[allow(clippy::too_many_arguments)]
pub fn correlation_profile(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    t: f64,
    a: f64,
    y_list: &[i64],
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<CorrelationRow>> {
    if !(a > 1.0) {
        return Err(Error::invalid(format!("a must exceed 1, got {a}")));
    }
    let ra = truncated_radius(kappa, t, a);
    let rt = truncation_radius(kappa, t, dim, tol);
    let ymax = y_list.iter().map(|y| y.unsigned_abs() as usize).max().unwrap_or(0);
    let radius = ymax + rt.max(ra);
    let at = |y: i64| {
        let mut x = vec![0i64; dim];
        x[0] = y;
        x
    };
    // Per replica: (m(0), m̃_a(0), [m(y)], [m̃_a(y)]).
    type Sample = (f64, f64, Vec<f64>, Vec<f64>);
    let samples: Vec<Sample> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Sample> {
            let env = replica_environment(family, dim, radius, seed, r)?;
            let full = |y: i64| solve_untruncated(&env, &at(y), kappa, t, tol).map(|m| m.value());
            let trunc = |y: i64| -> Result<f64> {
                let dom = BoxDomain::new(at(y), ra);
                let f = solve_truncated(&env, &dom, kappa, t, SolveMethod::Auto, tol)?;
                Ok(f.value_at(&at(y)).expect("center"))
            };
            let m = y_list.iter().map(|&y| full(y)).collect::<Result<Vec<_>>>()?;
            let ma = y_list.iter().map(|&y| trunc(y)).collect::<Result<Vec<_>>>()?;
            Ok((full(0)?, trunc(0)?, m, ma))
        })
        .collect::<Result<_>>()?;
    let m0: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ma0: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let exact_var = if kappa == 0.0 {
        Some((cumulant_h(&family, 2.0 * t)?).exp() - (2.0 * cumulant_h(&family, t)?).exp())
    } else {
        None
    };
    Ok(y_list
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let my: Vec<f64> = samples.iter().map(|s| s.2[k]).collect();
            let may: Vec<f64> = samples.iter().map(|s| s.3[k]).collect();
            let (c, c_se) = cov_with_se(&m0, &my);
            let (c_a, c_a_se) = cov_with_se(&ma0, &may);
            let denom = std_dev(&ma0) * std_dev(&may);
            CorrelationRow {
                y,
                c,
                c_se,
                c_a,
                c_a_se,
                corr_a: if denom > 0.0 { c_a / denom } else { 0.0 },
                exact: exact_var.map(|v| if y == 0 { v } else { 0.0 }),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockVariance {
    pub l: usize,
    pub t: f64,
    pub radius_a: usize,
    /// Replica variance of `Σ_{x∈Λ_L} m̃_a(x,t)`.
    pub var_hat: f64,
    pub var_ci: Interval,
    /// Pooled `ĉ_a(0,y,t)` for `y ∈ [−2r_a, 2r_a]^d`, first coordinate fastest.
    pub pooled_c: Vec<f64>,
    /// `|Λ_L| Σ_y ĉ_a(0,y,t)`.
    pub predicted: f64,
    pub ratio: f64,
    /// Mesoscopic scale of the parity decomposition, if one is feasible.
    pub l_prime: Option<usize>,
    /// Replica variance of each parity-class sum, indexed by class bitmask.
    pub parity_var: Vec<f64>,
    /// `(2L+1)^d Var(e^{v t})` when `κ = 0`.
    pub exact: Option<f64>,
}

impl BlockVariance {
    pub fn ratio_ok(&self) -> bool {
        (0.8..=1.25).contains(&self.ratio)
    }
}

/// Smallest `L′ > 2r` with a feasible partition of `Λ_L`.
fn parity_scale(l: usize, r: usize, dim: usize) -> Option<usize> {
    (2 * r + 1..=l).find(|&lp| build_partitions(l, lp, r, dim).is_ok())
}

#[allow(clippy::too_many_arguments)]
pub fn block_variance(
    family: TailFamily,
    kappa: f64,
    dim: usize,
    t: f64,
    l: usize,
    a: f64,
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<BlockVariance> {
    family.validate()?;
    let mut bv = block_variance_from(
        |r, radius| replica_environment(family, dim, radius, seed, r),
        kappa,
        dim,
        t,
        l,
        a,
        replicas,
        tol,
        seed,
    )?;
    if kappa == 0.0 {
        let v = (cumulant_h(&family, 2.0 * t)?).exp() - (2.0 * cumulant_h(&family, t)?).exp();
        bv.exact = Some(Cube::centered(dim, l).len() as f64 * v);
    }
    Ok(bv)
}

/// Block variance over environments produced by `sampler(replica, radius)`.
#[allow(clippy::too_many_arguments)]
pub fn block_variance_from<F>(
    sampler: F,
    kappa: f64,
    dim: usize,
    t: f64,
    l: usize,
    a: f64,
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<BlockVariance>
where
    F: Fn(usize, usize) -> Result<Environment> + Sync,
{
    if replicas < 2 {
        return Err(Error::invalid("block variance needs at least two replicas"));
    }
    let ra = truncated_radius(kappa, t, a);
    let cube = Cube::centered(dim, l);
    let fields: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let env = sampler(r, l + ra)?;
            cube.iter()
                .map(|x| {
                    let dom = BoxDomain::new(x.clone(), ra);
                    let f = solve_truncated(&env, &dom, kappa, t, SolveMethod::Auto, tol)?;
                    Ok(f.value_at(&x).expect("center"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let sums: Vec<f64> = fields.iter().map(|f| f.iter().sum()).collect();
    let var = |v: &[f64]| std_dev(v).powi(2);
    let var_hat = var(&sums);
    let mut rng = stream(seed, "bootstrap-block", 0);
    let mut buf = vec![0.0; replicas];
    let var_ci = bootstrap_indices(replicas, 1000, 0.95, &mut rng, |idx| {
        for (b, &i) in buf.iter_mut().zip(idx) {
            *b = sums[i];
        }
        var(&buf)
    })?;

    // Pooled covariance over all pairs (x, x+y) inside Λ_L, using the grand mean.
    let grand = fields.iter().flatten().sum::<f64>() / (replicas * cube.len()) as f64;
    let lag = Cube::centered(dim, 2 * ra);
    let mut pooled_c = Vec::with_capacity(lag.len());
    for y in lag.iter() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (i, x) in cube.iter().enumerate() {
            let xy: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            if let Some(j) = cube.index_of(&xy) {
                for f in &fields {
                    acc += (f[i] - grand) * (f[j] - grand);
                }
                count += replicas;
            }
        }
        pooled_c.push(if count > 0 { acc / count as f64 } else { 0.0 });
    }
    let predicted = cube.len() as f64 * pooled_c.iter().sum::<f64>();

    let l_prime = parity_scale(l, ra, dim);
    let parity_var = match l_prime {
        Some(lp) => {
            let plan = build_partitions(l, lp, ra, dim)?;
            let classes = 1usize << dim;
            let class_of: Vec<usize> =
                cube.iter().map(|x| plan.parity_class(&plan.index(plan.box_of(&x).expect("tiles")))).collect();
            (0..classes)
                .map(|k| {
                    let s: Vec<f64> = fields
                        .iter()
                        .map(|f| f.iter().zip(&class_of).filter(|(_, c)| **c == k).map(|(v, _)| v).sum())
                        .collect();
                    var(&s)
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(BlockVariance {
        l,
        t,
        radius_a: ra,
        var_hat,
        var_ci,
        pooled_c,
        predicted,
        ratio: var_hat / predicted,
        l_prime,
        parity_var,
        exact: None,
    })
}
