//! Subcommand orchestration. Every command validates its configuration,
//! writes its CSV tables and a `summary.json` into `out_dir`, and reports
//! whether all of its checks passed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analytics::{critical_a, cumulant_g, cumulant_h, growth_j, transition_exponents};
use crate::config::{parse_with_overrides, RunConfig};
use crate::env::{read_environment, sample_environment, write_environment, Environment, TailFamily};
use crate::error::{Error, Result};
use crate::fk::{exit_tail_mc, fk_estimate, write_fk, FkRow};
use crate::moments::{block_variance, correlation_profile, estimate_f_theta, estimate_h1};
use crate::operator::BoxDomain;
use crate::output::{fmt_f64, write_table, Summary};
use crate::pam::{solve_truncated, truncation_radius};
use crate::particles::{growth_bound_check, run_many, write_runs, RunOptions};
use crate::partition::build_partitions;
use crate::regime::{clt_experiment, critical_experiment, lln_experiment, write_regime, LSchedule, RegimeConfig};
use crate::spectral::{principal_eigen, verify_sandwich, write_spectrum};
use crate::stats;

/// Environment variable holding the default thread budget.
pub const THREADS_ENV: &str = "BRWRE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "brwre", version = env!("BRWRE_VERSION"), about = "Moments and regime experiments for branching random walks in random environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (flat TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Thread budget (overrides `threads` and BRWRE_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` overrides applied after the configuration file.
    #[arg(global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample an environment window and write env.csv/env.json.
    SampleEnv,
    /// Solve the truncated moment equation on Λ_L (moments.csv).
    Solve,
    /// Feynman–Kac path estimates (fk.csv) and exit-time tails (exit.csv).
    Fk,
    /// Exact particle simulation (runs.csv).
    Particles,
    /// Principal eigenpair and two-sided spectral bounds (spectrum.csv).
    SpectralCheck,
    /// Closed-form exponents and cumulants (exponents.csv).
    Exponents,
    /// Monte Carlo annealed moments, exponents and correlations.
    ExponentsMc,
    /// LLN / CLT / critical regime experiments (regime.csv).
    Regime,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SampleEnv => "sample-env",
            Command::Solve => "solve",
            Command::Fk => "fk",
            Command::Particles => "particles",
            Command::SpectralCheck => "spectral-check",
            Command::Exponents => "exponents",
            Command::ExponentsMc => "exponents-mc",
            Command::Regime => "regime",
        }
    }
}

/// Resolve the configuration of a parsed command line.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_with_overrides(&text, &cli.set)?;
    if let Some(o) = &cli.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            let n = v.trim().parse::<usize>().ok().filter(|&n| n >= 1);
            match n {
                Some(n) => cfg.threads = Some(n),
                None => {
                    return Err(Error::Config(vec![format!("{THREADS_ENV}: expected a positive integer, got {v:?}")]))
                }
            }
        }
    }
    Ok(cfg)
}

/// Run `command` inside a pool sized by the thread budget.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<bool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| run(command, cfg))
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<bool> {
    let out = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out)?;
    match command {
        Command::SampleEnv => sample_env_cmd(cfg, out),
        Command::Solve => solve_cmd(cfg, out),
        Command::Fk => fk_cmd(cfg, out),
        Command::Particles => particles_cmd(cfg, out),
        Command::SpectralCheck => spectral_cmd(cfg, out),
        Command::Exponents => exponents_cmd(cfg, out),
        Command::ExponentsMc => exponents_mc_cmd(cfg, out),
        Command::Regime => regime_cmd(cfg, out),
    }
}

fn family(cfg: &RunConfig) -> Result<TailFamily> {
    cfg.family.ok_or_else(|| Error::Config(vec!["family: required by this command".into()]))
}

fn single_t(cfg: &RunConfig) -> Result<f64> {
    match cfg.t.as_slice() {
        [t] => Ok(*t),
        _ => Err(Error::Config(vec![format!("t: this command takes a single time, got {} values", cfg.t.len())])),
    }
}

fn sites(cfg: &RunConfig) -> Vec<Vec<i64>> {
    if cfg.x.is_empty() {
        vec![vec![0; cfg.d]]
    } else {
        cfg.x.clone()
    }
}

fn coords(x: &[i64]) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

/// The environment from `env_file` (its `.json` header sits next to it) or
/// sampled from the configured family, covering at least `min_radius`.
pub fn load_environment(cfg: &RunConfig, min_radius: usize) -> Result<Environment> {
    let env = match &cfg.env_file {
        Some(f) => {
            let csv = PathBuf::from(f);
            let env = read_environment(&csv, &csv.with_extension("json"))?;
            if env.dim() != cfg.d {
                return Err(Error::invalid(format!("environment has d = {}, config has d = {}", env.dim(), cfg.d)));
            }
            env
        }
        None => sample_environment(family(cfg)?, cfg.d, cfg.env_radius.unwrap_or(0).max(min_radius), cfg.seed)?,
    };
    if env.radius() < min_radius {
        return Err(Error::WindowTooSmall { needed: min_radius, available: env.radius() });
    }
    Ok(match cfg.v_plus_max {
        Some(c) => env.clip_v_plus(c),
        None => env,
    })
}

fn finish<R: Serialize>(
    cfg: &RunConfig,
    out: &Path,
    command: Command,
    results: R,
    passed: bool,
    start: Instant,
) -> Result<bool> {
    Summary::new(command.name(), cfg, results, passed)
        .timing("total", start.elapsed())
        .write(&out.join("summary.json"))?;
    Ok(passed)
}

fn sample_env_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let env = load_environment(cfg, cfg.env_radius.unwrap_or(cfg.radius))?;
    write_environment(&env, &out.join("env.csv"), &out.join("env.json"))?;
    #[derive(Serialize)]
    struct R {
        sites: usize,
        hard_core_sites: usize,
        max_v: f64,
    }
    let max_v = (0..env.len()).map(|i| env.v(i)).fold(f64::NEG_INFINITY, f64::max);
    let r = R { sites: env.len(), hard_core_sites: env.hard_core_sites().len(), max_v };
    finish(cfg, out, Command::SampleEnv, r, true, start)
}

fn solve_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let t = single_t(cfg)?;
    let l = cfg.l.first().copied().unwrap_or(0) as usize;
    let reach = truncation_radius(cfg.kappa, t, cfg.d, cfg.tol);
    let env = load_environment(cfg, l + reach)?;
    let domain = BoxDomain::centered(cfg.d, l + reach);
    let field = solve_truncated(&env, &domain, cfg.kappa, t, cfg.method, cfg.tol)?;
    let block = crate::lattice::Cube::centered(cfg.d, l);
    let mut rows = Vec::with_capacity(block.len());
    let mut logs = Vec::with_capacity(block.len());
    for x in block.iter() {
        let i = domain.cube.index_of(&x).expect("Λ_L lies inside the solve box");
        rows.push(vec![coords(&x), fmt_f64(field.mantissa[i]), fmt_f64(field.log_offset)]);
        logs.push(field.mantissa[i].ln() + field.log_offset);
    }
    write_table(&out.join("moments.csv"), &["x", "mantissa", "log_offset"], &rows)?;
    #[derive(Serialize)]
    struct R {
        t: f64,
        l: usize,
        truncation_radius: usize,
        log_block_mean: f64,
    }
    let passed = field.mantissa.iter().all(|m| m.is_finite() && *m >= 0.0);
    let r = R { t, l, truncation_radius: reach, log_block_mean: stats::log_mean_exp(&logs) };
    finish(cfg, out, Command::Solve, r, passed, start)
}

fn fk_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let t = single_t(cfg)?;
    let env = load_environment(cfg, cfg.radius + 1)?;
    let domain = BoxDomain::centered(cfg.d, cfg.radius);
    let field = solve_truncated(&env, &domain, cfg.kappa, t, cfg.method, cfg.tol)?;
    #[derive(Serialize)]
    struct Check {
        x: Vec<i64>,
        log_fk: f64,
        stderr: f64,
        log_pam: f64,
        agree: bool,
    }
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (k, x) in sites(cfg).into_iter().enumerate() {
        let est = fk_estimate(
            &env,
            &x,
            cfg.kappa,
            t,
            Some(&domain),
            cfg.n_paths,
            crate::rng::derive_seed(cfg.seed, "fk-site", k as u64),
        )?;
        let log_pam = field.ln_at(&x).unwrap_or(f64::NEG_INFINITY);
        let agree = if est.all_killed || log_pam == f64::NEG_INFINITY {
            est.all_killed && log_pam == f64::NEG_INFINITY
        } else {
            (est.log_mean - log_pam).abs() <= 3.0 * est.stderr + 1e-12
        };
        checks.push(Check { x: x.clone(), log_fk: est.log_mean, stderr: est.stderr, log_pam, agree });
        rows.push(FkRow { x, estimate: est });
    }
    write_fk(&out.join("fk.csv"), &rows)?;
    let mut exits = Vec::new();
    if !cfg.exit_x.is_empty() {
        let mut k = 0u64;
        for &tt in &cfg.t {
            for &x in &cfg.exit_x {
                exits.push(exit_tail_mc(
                    cfg.kappa,
                    cfg.d,
                    x,
                    tt,
                    cfg.n_paths,
                    crate::rng::derive_seed(cfg.seed, "exit-cell", k),
                )?);
                k += 1;
            }
        }
        let rows: Vec<Vec<String>> = exits
            .iter()
            .map(|e| {
                vec![
                    e.x.to_string(),
                    fmt_f64(e.t),
                    fmt_f64(e.p_hat),
                    fmt_f64(e.ci.lo),
                    fmt_f64(e.ci.hi),
                    fmt_f64(e.bound),
                ]
            })
            .collect();
        write_table(&out.join("exit.csv"), &["x", "t", "p_hat", "ci_lo", "ci_hi", "bound"], &rows)?;
    }
    let passed = checks.iter().all(|c| c.agree) && exits.iter().all(|e| e.within_bound());
    #[derive(Serialize)]
    struct R<E> {
        t: f64,
        agreement: Vec<Check>,
        exit_tails: Vec<E>,
    }
    finish(cfg, out, Command::Fk, R { t, agreement: checks, exit_tails: exits }, passed, start)
}

fn particles_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let t = single_t(cfg)?;
    let env = load_environment(cfg, cfg.radius + 1)?;
    let domain = BoxDomain::centered(cfg.d, cfg.radius);
    let x = sites(cfg).swap_remove(0);
    let runs = run_many(&env, &domain, cfg.kappa, t, &x, cfg.n_runs, cfg.seed, RunOptions::default())?;
    write_runs(&out.join("runs.csv"), &runs)?;
    let z: Vec<f64> = runs.iter().map(|r| r.zeta as f64).collect();
    let mean = stats::mean(&z);
    let stderr = stats::std_dev(&z) / (z.len() as f64).sqrt();
    let pam = solve_truncated(&env, &domain, cfg.kappa, t, cfg.method, cfg.tol)?.value_at(&x).unwrap_or(0.0);
    let truncated = runs.iter().filter(|r| r.truncated).count();
    let agree = truncated == 0 && (mean - pam).abs() <= 3.0 * stderr + 1e-12 * pam.abs().max(1.0);
    let growth = if x.iter().all(|&c| c == 0) {
        Some(growth_bound_check(&env, cfg.radius, cfg.kappa, t, cfg.n_runs, cfg.seed)?)
    } else {
        None
    };
    #[derive(Serialize)]
    struct R<G> {
        t: f64,
        x: Vec<i64>,
        mean_zeta: f64,
        stderr: f64,
        pam: f64,
        truncated_runs: usize,
        agree: bool,
        growth_bounds: Option<G>,
    }
    let passed = agree && growth.as_ref().is_none_or(|g| g.holds());
    let r = R { t, x, mean_zeta: mean, stderr, pam, truncated_runs: truncated, agree, growth_bounds: growth };
    finish(cfg, out, Command::Particles, r, passed, start)
}

fn spectral_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let env = load_environment(cfg, cfg.radius)?;
    let domain = BoxDomain::centered(cfg.d, cfg.radius);
    let slice = principal_eigen(&env, &domain, cfg.kappa)?;
    write_spectrum(&out.join("spectrum.csv"), &slice)?;
    let reports = cfg.t.iter().map(|&t| verify_sandwich(&env, &domain, cfg.kappa, t)).collect::<Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| if r.active_len >= 2 { r.strictly_holds() } else { r.holds() });
    #[derive(Serialize)]
    struct R<S> {
        lambda0: f64,
        gap: Option<f64>,
        degenerate: bool,
        residual: f64,
        sandwich: Vec<S>,
    }
    let r = R {
        lambda0: slice.lambda0(),
        gap: slice.gap(),
        degenerate: slice.is_degenerate(),
        residual: slice.residual,
        sandwich: reports,
    };
    finish(cfg, out, Command::SpectralCheck, r, passed, start)
}

fn exponents_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let fam = family(cfg)?;
    let table = transition_exponents(&fam, cfg.d)?;
    let mut rows = Vec::new();
    for &t in &cfg.t {
        let h = cumulant_h(&fam, t)?;
        let j = growth_j(&fam, cfg.d, t).map(|g| g.value).unwrap_or(f64::NAN);
        for &theta in &cfg.theta {
            let g = cumulant_g(&fam, theta, t)?;
            rows.push(vec![fmt_f64(t), fmt_f64(theta), fmt_f64(h), fmt_f64(g), fmt_f64(j)]);
        }
    }
    write_table(&out.join("exponents.csv"), &["t", "theta", "H", "G_theta", "J"], &rows)?;
    #[derive(Serialize)]
    struct R<T> {
        exponents: T,
        critical_a: Option<f64>,
    }
    let a = match cfg.gamma {
        Some(g) => Some(critical_a(&fam, cfg.d, g)?),
        None => None,
    };
    finish(cfg, out, Command::Exponents, R { exponents: table, critical_a: a }, true, start)
}

fn exponents_mc_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let fam = family(cfg)?;
    let h1 = estimate_h1(fam, cfg.kappa, cfg.d, &cfg.t, cfg.replicas, cfg.tol, cfg.seed)?;
    let rows: Vec<Vec<String>> = h1
        .iter()
        .map(|e| {
            vec![
                fmt_f64(e.t),
                e.replicas.to_string(),
                fmt_f64(e.h1_hat),
                fmt_f64(e.ci.lo),
                fmt_f64(e.ci.hi),
                fmt_f64(e.h_lower),
                fmt_f64(e.h_upper),
            ]
        })
        .collect();
    write_table(&out.join("h1.csv"), &["t", "replicas", "h1_hat", "ci_lo", "ci_hi", "h_lower", "h_upper"], &rows)?;
    let ft = estimate_f_theta(fam, cfg.kappa, cfg.d, &cfg.theta, &cfg.t, cfg.replicas, cfg.tol, cfg.seed)?;
    let rows: Vec<Vec<String>> = ft
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.theta),
                fmt_f64(r.t),
                fmt_f64(r.f_hat),
                fmt_f64(r.ci.lo),
                fmt_f64(r.ci.hi),
                r.g_exact.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    write_table(&out.join("ftheta.csv"), &["theta", "t", "f_hat", "ci_lo", "ci_hi", "g_exact"], &rows)?;
    let t0 = cfg.t[0];
    if !cfg.y.is_empty() {
        let corr = correlation_profile(fam, cfg.kappa, cfg.d, t0, cfg.a, &cfg.y, cfg.replicas, cfg.tol, cfg.seed)?;
        let rows: Vec<Vec<String>> = corr
            .iter()
            .map(|c| {
                vec![
                    c.y.to_string(),
                    fmt_f64(c.c),
                    fmt_f64(c.c_se),
                    fmt_f64(c.c_a),
                    fmt_f64(c.c_a_se),
                    fmt_f64(c.corr_a),
                    c.exact.map(fmt_f64).unwrap_or_default(),
                ]
            })
            .collect();
        write_table(&out.join("corr.csv"), &["y", "c", "c_se", "c_a", "c_a_se", "corr_a", "exact"], &rows)?;
    }
    let mut passed = h1.iter().all(|e| e.within_sandwich());
    let mut blocks = None;
    if let Some(&l) = cfg.l.first() {
        let bv = block_variance(fam, cfg.kappa, cfg.d, t0, l as usize, cfg.a, cfg.replicas, cfg.tol, cfg.seed)?;
        passed &= bv.ratio_ok();
        if let (Some(lp), Some(r)) = (cfg.l_prime, cfg.fine_r) {
            let plan = build_partitions(l as usize, lp, r, cfg.d)?;
            let report = plan.check();
            passed &= report.all();
            #[derive(Serialize)]
            struct P<A, B> {
                plan: A,
                invariants: B,
            }
            std::fs::write(
                out.join("partition.json"),
                serde_json::to_string_pretty(&P { plan, invariants: report })? + "\n",
            )?;
        }
        blocks = Some(bv);
    }
    #[derive(Serialize)]
    struct R<A, B> {
        h1: Vec<A>,
        block_variance: Option<B>,
    }
    finish(cfg, out, Command::ExponentsMc, R { h1, block_variance: blocks }, passed, start)
}

fn regime_cmd(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let start = Instant::now();
    let fam = family(cfg)?;
    let schedule = match (&cfg.schedule, cfg.experiment.as_str()) {
        (Some(s), _) => s.clone(),
        (None, "critical") => LSchedule::Explicit { values: vec![1] },
        (None, _) => return Err(Error::Config(vec!["schedule: required by the lln and clt experiments".into()])),
    };
    let mut rc = RegimeConfig::new(fam, cfg.d, cfg.kappa, cfg.t.clone(), schedule);
    rc.replicas = cfg.replicas;
    rc.thresholds = cfg.thresholds;
    rc.seed = cfg.seed;
    rc.tol = cfg.tol;
    rc.max_l = cfg.max_l;
    rc.validate()?;
    let verdicts = match cfg.experiment.as_str() {
        "lln" => lln_experiment(&rc)?,
        "clt" => clt_experiment(&rc)?,
        _ => {
            let gamma =
                cfg.gamma.ok_or_else(|| Error::Config(vec!["gamma: required by the critical experiment".into()]))?;
            critical_experiment(&rc, gamma, cfg.delta)?
        }
    };
    write_regime(&out.join("regime.csv"), &verdicts)?;
    let passed = match &cfg.expect {
        Some(e) => verdicts.iter().all(|v| v.classification.label() == e),
        None => true,
    };
    finish(cfg, out, Command::Regime, verdicts, passed, start)
}
