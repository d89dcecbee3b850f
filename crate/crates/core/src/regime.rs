//! Regime experiments for the empirical average `m^L(0,t)` over replica
//! environments: law of large numbers, central limit behaviour and the
//! critical window below `γ₁`.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{critical_a, cumulant_g, cumulant_h, frechet_nu, growth_j, transition_exponents, ExponentTable};
use crate::env::{PotentialLaw, TailFamily};
use crate::error::{Error, Result};
use crate::iid::{iid_reference, BlockMode, BlockSumSampler, IidReference};
use crate::moments::{estimate_f_theta, replica_environment};
use crate::output::{fmt_f64, write_table};
use crate::pam::{empirical_average, truncation_radius};
use crate::rng::{derive_seed, stream};
use crate::stats::{excess_kurtosis, ks_normal, mean, median, quantile, skewness, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Ratio band `[1 − band, 1 + band]` for the annealed verdict.
    pub band: f64,
    /// Required fraction of replicas.
    pub fraction: f64,
    /// Ratio level for the non-annealed verdict.
    pub below: f64,
    pub skew: f64,
    pub kurt: f64,
    pub ks_p: f64,
    /// Median `|Z|` at or below which the CLT statistic is degenerate.
    pub degenerate_median: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { band: 0.05, fraction: 0.95, below: 0.5, skew: 0.2, kurt: 0.5, ks_p: 0.01, degenerate_median: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LSchedule {
    /// Sweep these box radii at every time.
    Explicit { values: Vec<u64> },
    /// `d log L = γ J(t)`.
    GammaJ { gamma: f64 },
    /// `d log L = F̂_ε(t)` from an estimate table of `(t, F̂_ε(t))`.
    FEpsilon { table: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeConfig {
    pub family: TailFamily,
    pub dim: usize,
    pub kappa: f64,
    pub t_grid: Vec<f64>,
    pub schedule: LSchedule,
    pub replicas: usize,
    pub thresholds: Thresholds,
    pub seed: u64,
    pub tol: f64,
    /// Largest admissible `L`.
    pub max_l: f64,
}

/// Largest `L` for runs with diffusion, where every site is solved.
pub const MAX_L_DIFFUSIVE: f64 = 2000.0;

impl RegimeConfig {
    pub fn new(family: TailFamily, dim: usize, kappa: f64, t_grid: Vec<f64>, schedule: LSchedule) -> Self {
        Self {
            family,
            dim,
            kappa,
            t_grid,
            schedule,
            replicas: 200,
            thresholds: Thresholds::default(),
            seed: 1,
            tol: 1e-8,
            max_l: 1e12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        let mut errs = Vec::new();
        if self.dim == 0 {
            errs.push("d must be ≥ 1".to_string());
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            errs.push(format!("κ must be ≥ 0, got {}", self.kappa));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            errs.push("t grid must be nonempty with t > 0".to_string());
        }
        if self.replicas < 100 {
            errs.push(format!("replicas must be ≥ 100, got {}", self.replicas));
        }
        match &self.schedule {
            LSchedule::Explicit { values } if values.is_empty() || values.contains(&0) => {
                errs.push("explicit L values must be ≥ 1".to_string())
            }
            LSchedule::GammaJ { gamma } if !(*gamma > 0.0) => errs.push(format!("γ must be > 0, got {gamma}")),
            _ => {}
        }
        if self.kappa > 0.0 && self.max_l > MAX_L_DIFFUSIVE {
            errs.push(format!("runs with κ > 0 are limited to L ≤ {MAX_L_DIFFUSIVE}; set max_l accordingly"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduledL {
    pub l: u64,
    /// `d log L / J(t)`, NaN when `J` has an unknown constant.
    pub gamma_equiv: f64,
}

fn known_j(family: &TailFamily, dim: usize, t: f64) -> Option<f64> {
    growth_j(family, dim, t).ok().filter(|g| g.unknown_constant.is_none()).map(|g| g.value)
}

fn round_up_l(log_l: f64, max_l: f64) -> Result<u64> {
    let required = log_l.exp();
    if !(required <= max_l) {
        return Err(Error::ScheduleTooLarge { required_l: required, budget: max_l });
    }
    Ok((required.ceil() as u64).max(1))
}

pub fn schedule_l(rule: &LSchedule, family: &TailFamily, dim: usize, t: f64, max_l: f64) -> Result<Vec<ScheduledL>> {
    let d = dim as f64;
    let equiv = |l: u64| known_j(family, dim, t).map_or(f64::NAN, |j| d * (l as f64).ln() / j);
    match rule {
        LSchedule::Explicit { values } => values
            .iter()
            .map(|&l| {
                if l as f64 > max_l {
                    Err(Error::ScheduleTooLarge { required_l: l as f64, budget: max_l })
                } else {
                    Ok(ScheduledL { l, gamma_equiv: equiv(l) })
                }
            })
            .collect(),
        LSchedule::GammaJ { gamma } => {
            if *gamma == 0.0 {
                return Ok(vec![ScheduledL { l: 1, gamma_equiv: 0.0 }]);
            }
            let g = growth_j(family, dim, t)?;
            if let Some(c) = g.unknown_constant {
                return Err(Error::invalid(format!(
                    "J(t) for {family} carries the unknown constant {c}; use the F_epsilon schedule"
                )));
            }
            let l = round_up_l(gamma * g.value / d, max_l)?;
            Ok(vec![ScheduledL { l, gamma_equiv: equiv(l) }])
        }
        LSchedule::FEpsilon { table } => {
            let f = table
                .iter()
                .find(|(s, _)| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
                .map(|(_, f)| *f)
                .ok_or_else(|| Error::invalid(format!("no F_epsilon estimate for t = {t}")))?;
            let l = round_up_l(f / d, max_l)?;
            Ok(vec![ScheduledL { l, gamma_equiv: equiv(l) }])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Annealed,
    NonAnnealed,
    Gaussian,
    NonGaussian,
    Inconclusive,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Annealed => "annealed",
            Classification::NonAnnealed => "non-annealed",
            Classification::Gaussian => "gaussian",
            Classification::NonGaussian => "non-gaussian",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

/// Statistics and verdict for one `(t, L)` cell. Fields that do not apply to
/// an experiment are NaN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeVerdict {
    pub experiment: &'static str,
    pub family: String,
    pub kappa: f64,
    pub dim: usize,
    pub t: f64,
    pub l: u64,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub replicas: usize,
    pub ratio_mean: f64,
    pub ratio_sd: f64,
    pub ratio_q05: f64,
    pub ratio_q50: f64,
    pub ratio_q95: f64,
    pub frac_in_band: f64,
    pub frac_below: f64,
    pub skew: f64,
    pub kurt: f64,
    pub ks_p: f64,
    pub median_abs_z: f64,
    pub delta: f64,
    /// Log of the reference or normaliser the replicas were compared with.
    pub log_reference: f64,
    /// Width of the systematic uncertainty of `log_reference` (κ > 0).
    pub reference_uncertainty: f64,
    pub mode: Option<BlockMode>,
    pub classification: Classification,
}

/// `m^L` for every replica plus the single-site references used to
/// normalise them.
#[derive(Debug, Clone)]
pub struct ReplicaMeans {
    pub log_means: Vec<f64>,
    /// `log ⟨m(0,t)⟩`, exact at κ = 0 and the sandwich midpoint otherwise.
    pub log_reference: f64,
    pub reference_uncertainty: f64,
    /// Exact single-site references at κ = 0.
    pub iid: Option<IidReference>,
    pub n_sites: u64,
    pub mode: Option<BlockMode>,
}

fn n_sites(l: u64, dim: usize) -> Result<u64> {
    (2 * l + 1).checked_pow(dim as u32).ok_or(Error::ScheduleTooLarge { required_l: l as f64, budget: f64::NAN })
}

/// Zero-diffusion replica means for an arbitrary site law.
pub fn iid_block_means<L: PotentialLaw + ?Sized>(
    law: &L,
    t: f64,
    l: u64,
    dim: usize,
    replicas: usize,
    seed: u64,
) -> Result<ReplicaMeans> {
    let n = n_sites(l, dim)?;
    let sampler = BlockSumSampler::new(law, t, n)?;
    let reference = iid_reference(law, t)?;
    let master = derive_seed(seed, "regime-replica", t.to_bits());
    let log_means = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(master, "replica", r as u64);
            sampler.sample_mean(&mut rng).ln()
        })
        .collect();
    Ok(ReplicaMeans {
        log_means,
        log_reference: reference.h,
        reference_uncertainty: 0.0,
        iid: Some(reference),
        n_sites: n,
        mode: Some(sampler.mode),
    })
}

/// Replica means for `config` at `(t, L)`: exact i.i.d. sums at κ = 0, windowed
/// solves otherwise.
pub fn replica_means(config: &RegimeConfig, t: f64, l: u64) -> Result<ReplicaMeans> {
    if config.kappa == 0.0 {
        return iid_block_means(&config.family, t, l, config.dim, config.replicas, config.seed);
    }
    if l as f64 > MAX_L_DIFFUSIVE {
        return Err(Error::ScheduleTooLarge { required_l: l as f64, budget: MAX_L_DIFFUSIVE });
    }
    let radius = l as usize + truncation_radius(config.kappa, t, config.dim, config.tol);
    let master = derive_seed(config.seed, "regime-replica", t.to_bits());
    let log_means = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let env = replica_environment(config.family, config.dim, radius, master, r)?;
            empirical_average(&env, l as usize, config.kappa, t, config.tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let h = cumulant_h(&config.family, t)?;
    let width = 2.0 * config.dim as f64 * config.kappa * t;
    Ok(ReplicaMeans {
        log_means,
        log_reference: h - 0.5 * width,
        reference_uncertainty: 0.5 * width,
        iid: None,
        n_sites: n_sites(l, config.dim)?,
        mode: None,
    })
}

fn blank_verdict(
    experiment: &'static str,
    config: &RegimeConfig,
    table: &ExponentTable,
    t: f64,
    l: u64,
) -> RegimeVerdict {
    RegimeVerdict {
        experiment,
        family: config.family.to_string(),
        kappa: config.kappa,
        dim: config.dim,
        t,
        l,
        gamma: f64::NAN,
        gamma1: table.gamma1,
        gamma2: table.gamma2,
        replicas: config.replicas,
        ratio_mean: f64::NAN,
        ratio_sd: f64::NAN,
        ratio_q05: f64::NAN,
        ratio_q50: f64::NAN,
        ratio_q95: f64::NAN,
        frac_in_band: f64::NAN,
        frac_below: f64::NAN,
        skew: f64::NAN,
        kurt: f64::NAN,
        ks_p: f64::NAN,
        median_abs_z: f64::NAN,
        delta: f64::NAN,
        log_reference: f64::NAN,
        reference_uncertainty: 0.0,
        mode: None,
        classification: Classification::Inconclusive,
    }
}

fn schedule_gamma(config: &RegimeConfig, s: &ScheduledL) -> f64 {
    match config.schedule {
        LSchedule::GammaJ { gamma } => gamma,
        _ => s.gamma_equiv,
    }
}

fn fill_ratio_stats(v: &mut RegimeVerdict, ratios: &[f64], th: &Thresholds) {
    let n = ratios.len() as f64;
    v.ratio_mean = mean(ratios);
    v.ratio_sd = std_dev(ratios);
    v.ratio_q05 = quantile(ratios, 0.05);
    v.ratio_q50 = quantile(ratios, 0.5);
    v.ratio_q95 = quantile(ratios, 0.95);
    v.frac_in_band = ratios.iter().filter(|r| (*r - 1.0).abs() <= th.band).count() as f64 / n;
    v.frac_below = ratios.iter().filter(|r| **r < th.below).count() as f64 / n;
}

pub fn classify_lln(frac_in_band: f64, frac_below: f64, th: &Thresholds) -> Classification {
    if frac_in_band >= th.fraction {
        Classification::Annealed
    } else if frac_below >= th.fraction {
        Classification::NonAnnealed
    } else {
        Classification::Inconclusive
    }
}

pub fn lln_experiment(config: &RegimeConfig) -> Result<Vec<RegimeVerdict>> {
    config.validate()?;
    let table = transition_exponents(&config.family, config.dim)?;
    let mut out = Vec::new();
    for &t in &config.t_grid {
        for s in schedule_l(&config.schedule, &config.family, config.dim, t, config.max_l)? {
            let rm = replica_means(config, t, s.l)?;
            let ratios: Vec<f64> = rm.log_means.iter().map(|lm| (lm - rm.log_reference).exp()).collect();
            let mut v = blank_verdict("lln", config, &table, t, s.l);
            v.gamma = schedule_gamma(config, &s);
            fill_ratio_stats(&mut v, &ratios, &config.thresholds);
            v.log_reference = rm.log_reference;
            v.reference_uncertainty = rm.reference_uncertainty;
            v.mode = rm.mode;
            v.classification = classify_lln(v.frac_in_band, v.frac_below, &config.thresholds);
            out.push(v);
        }
    }
    Ok(out)
}

/// CLT statistics of standardized replica values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltStats {
    pub skew: f64,
    pub kurt: f64,
    pub ks_p: f64,
    pub median_abs_z: f64,
}

/// `Z_r = (m^L_r − mean)·√N / sd`, with `Z ≡ 0` when `sd = 0`.
pub fn clt_statistic(means: &[f64], mean_ref: f64, sd_ref: f64, n_sites: u64) -> Vec<f64> {
    if sd_ref == 0.0 {
        return vec![0.0; means.len()];
    }
    let scale = (n_sites as f64).sqrt() / sd_ref;
    means.iter().map(|m| (m - mean_ref) * scale).collect()
}

pub fn clt_stats(z: &[f64]) -> CltStats {
    let median_abs_z = median(&z.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let sd = std_dev(z);
    if sd == 0.0 {
        return CltStats { skew: 0.0, kurt: 0.0, ks_p: 0.0, median_abs_z };
    }
    let m = mean(z);
    let fitted: Vec<f64> = z.iter().map(|x| (x - m) / sd).collect();
    CltStats { skew: skewness(z), kurt: excess_kurtosis(z), ks_p: ks_normal(&fitted).p_value, median_abs_z }
}

pub fn classify_clt(s: &CltStats, th: &Thresholds) -> Classification {
    if s.median_abs_z <= th.degenerate_median {
        Classification::NonGaussian
    } else if s.skew.abs() <= th.skew && s.kurt.abs() <= th.kurt && s.ks_p >= th.ks_p {
        Classification::Gaussian
    } else {
        Classification::Inconclusive
    }
}

pub fn clt_experiment(config: &RegimeConfig) -> Result<Vec<RegimeVerdict>> {
    config.validate()?;
    let table = transition_exponents(&config.family, config.dim)?;
    let mut out = Vec::new();
    for &t in &config.t_grid {
        for s in schedule_l(&config.schedule, &config.family, config.dim, t, config.max_l)? {
            let rm = replica_means(config, t, s.l)?;
            let means: Vec<f64> = rm.log_means.iter().map(|l| l.exp()).collect();
            let z = match rm.iid {
                Some(r) => clt_statistic(&means, r.mean, r.sd, rm.n_sites),
                // With diffusion the single-site variance is not known; the
                // replicas are standardised by their own mean and spread.
                None => clt_statistic(&means, mean(&means), std_dev(&means) * (rm.n_sites as f64).sqrt(), rm.n_sites),
            };
            let st = clt_stats(&z);
            let ratios: Vec<f64> = rm.log_means.iter().map(|lm| (lm - rm.log_reference).exp()).collect();
            let mut v = blank_verdict("clt", config, &table, t, s.l);
            v.gamma = schedule_gamma(config, &s);
            fill_ratio_stats(&mut v, &ratios, &config.thresholds);
            v.skew = st.skew;
            v.kurt = st.kurt;
            v.ks_p = st.ks_p;
            v.median_abs_z = st.median_abs_z;
            v.log_reference = rm.log_reference;
            v.reference_uncertainty = rm.reference_uncertainty;
            v.mode = rm.mode;
            v.classification = classify_clt(&st, &config.thresholds);
            out.push(v);
        }
    }
    Ok(out)
}

/// `((1+θ) − (1+θ)^{1−ν²})/θ`, the limit of `F_θ(t)/(t/α_t²)` up to `χ`.
pub fn frechet_f_factor(theta: f64, nu: f64) -> f64 {
    let nu2 = nu * nu;
    ((1.0 + theta) - (1.0 + theta).powf(1.0 - nu2)) / theta
}

/// `J(t)` for the Frechet family calibrated from `F_θ(t)`: exact `G_θ` at
/// κ = 0, the replica estimate `F̂_θ` otherwise.
pub fn calibrated_frechet_j(config: &RegimeConfig, theta: f64, t: f64) -> Result<f64> {
    let TailFamily::Frechet { rho } = config.family else {
        return Err(Error::invalid("J calibration is only defined for the Frechet family"));
    };
    let f = if config.kappa == 0.0 {
        cumulant_g(&config.family, theta, t)?
    } else {
        let rows = estimate_f_theta(
            config.family,
            config.kappa,
            config.dim,
            &[theta],
            &[t],
            config.replicas,
            config.tol,
            derive_seed(config.seed, "calibration", 0),
        )?;
        rows[0].f_hat
    };
    Ok(f / frechet_f_factor(theta, frechet_nu(rho, config.dim)))
}

/// Default `θ` of the Frechet calibration.
pub const CALIBRATION_THETA: f64 = 0.5;

/// Fraction of replicas below the critical normaliser at `γ < γ₁`.
pub fn critical_experiment(config: &RegimeConfig, gamma: f64, delta: f64) -> Result<Vec<RegimeVerdict>> {
    config.validate()?;
    let table = transition_exponents(&config.family, config.dim)?;
    if !(gamma > 0.0 && gamma < table.gamma1) {
        return Err(Error::invalid(format!("critical regime needs 0 < γ < γ₁ = {}, got {gamma}", table.gamma1)));
    }
    let a = critical_a(&config.family, config.dim, gamma)?;
    let d = config.dim as f64;
    let mut out = Vec::new();
    for &t in &config.t_grid {
        let (j, log_norm) = match config.family {
            TailFamily::Weibull { .. } => {
                let h = cumulant_h(&config.family, t)?;
                (h, (a + delta) * h)
            }
            TailFamily::DoubleExp { .. } | TailFamily::SquaredDoubleExp => {
                let j = growth_j(&config.family, config.dim, t)?.value;
                let b = a + delta;
                if !(b > 0.0) {
                    return Err(Error::invalid(format!("a(γ) + δ must be positive, got {b}")));
                }
                (j, cumulant_h(&config.family, b * t)? / b)
            }
            TailFamily::Frechet { .. } => {
                let j = calibrated_frechet_j(config, CALIBRATION_THETA, t)?;
                (j, -(a - delta) * j)
            }
            TailFamily::HardCore { .. } => unreachable!("critical_a rejects the hard-core family"),
        };
        let l = round_up_l(gamma * j / d, config.max_l)?;
        let rm = replica_means(config, t, l)?;
        let n = rm.log_means.len() as f64;
        let mut v = blank_verdict("critical", config, &table, t, l);
        v.gamma = gamma;
        v.delta = delta;
        v.log_reference = log_norm;
        v.mode = rm.mode;
        let ratios: Vec<f64> = rm.log_means.iter().map(|lm| (lm - log_norm).exp()).collect();
        fill_ratio_stats(&mut v, &ratios, &config.thresholds);
        v.frac_below = rm.log_means.iter().filter(|lm| **lm < log_norm).count() as f64 / n;
        v.classification = if v.frac_below >= config.thresholds.fraction {
            Classification::NonAnnealed
        } else {
            Classification::Inconclusive
        };
        out.push(v);
    }
    Ok(out)
}

pub const REGIME_COLUMNS: [&str; 19] = [
    "family",
    "kappa",
    "d",
    "t",
    "L",
    "gamma",
    "gamma1",
    "gamma2",
    "frac_in_band",
    "skew",
    "kurt",
    "ks_p",
    "verdict",
    "experiment",
    "frac_below",
    "median_abs_z",
    "delta",
    "log_reference",
    "mode",
];

pub fn write_regime(path: &Path, verdicts: &[RegimeVerdict]) -> Result<()> {
    let rows: Vec<Vec<String>> = verdicts
        .iter()
        .map(|v| {
            vec![
                v.family.clone(),
                fmt_f64(v.kappa),
                v.dim.to_string(),
                fmt_f64(v.t),
                v.l.to_string(),
                fmt_f64(v.gamma),
                fmt_f64(v.gamma1),
                fmt_f64(v.gamma2),
                fmt_f64(v.frac_in_band),
                fmt_f64(v.skew),
                fmt_f64(v.kurt),
                fmt_f64(v.ks_p),
                v.classification.label().to_string(),
                v.experiment.to_string(),
                fmt_f64(v.frac_below),
                fmt_f64(v.median_abs_z),
                fmt_f64(v.delta),
                fmt_f64(v.log_reference),
                match v.mode {
                    None => "solve".to_string(),
                    Some(BlockMode::Exact) => "exact".to_string(),
                    Some(BlockMode::Hybrid { .. }) => "hybrid".to_string(),
                },
            ]
        })
        .collect();
    write_table(path, &REGIME_COLUMNS, &rows)
}
