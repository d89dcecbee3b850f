//! Exact (Gillespie) simulation of the branching/annihilating random walk
//! killed on leaving a box or on hitting a hard-core site.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::operator::BoxDomain;
use crate::output::{fmt_f64, write_table};
use crate::rng::stream;

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;

/// Binary indexed tree of nonnegative rates.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.tree.len() - 1;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub branch: u64,
    pub death: u64,
    pub jump: u64,
    /// Jumps out of the box.
    pub boundary_exit: u64,
    /// Jumps onto a hard-core site.
    pub obstacle_kill: u64,
}

impl EventCounts {
    /// All removals by the Dirichlet/hard-core convention.
    pub fn boundary_kill(&self) -> u64 {
        self.boundary_exit + self.obstacle_kill
    }
}

/// Occupation numbers on a box with time and counters.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub domain: BoxDomain,
    pub eta: Vec<u64>,
    pub time: f64,
    pub counts: EventCounts,
}

impl ParticleState {
    pub fn population(&self) -> u64 {
        self.eta.iter().sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleRun {
    pub t_end: f64,
    pub zeta: u64,
    pub counts: EventCounts,
    /// Population cap reached before `t_end`.
    pub truncated: bool,
    /// `(event time, ζ)` after every event when requested.
    pub trajectory: Option<Vec<(f64, u64)>>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub population_cap: u64,
    pub record_trajectory: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { population_cap: DEFAULT_POPULATION_CAP, record_trajectory: false }
    }
}

/// One run from a single particle at `x`.
pub fn gillespie_run<R: Rng + ?Sized>(
    env: &Environment,
    domain: &BoxDomain,
    kappa: f64,
    t_end: f64,
    x: &[i64],
    opts: RunOptions,
    rng: &mut R,
) -> Result<ParticleRun> {
    if !(t_end >= 0.0) || !(kappa >= 0.0) {
        return Err(Error::invalid(format!("need t ≥ 0 and κ ≥ 0, got t={t_end}, κ={kappa}")));
    }
    let cube = &domain.cube;
    if !cube.inside(&env.window) {
        return Err(Error::WindowTooSmall {
            needed: crate::lattice::sup_norm(&cube.center) as usize + cube.radius,
            available: env.radius(),
        });
    }
    let start = cube.index_of(x).ok_or_else(|| Error::invalid(format!("start {x:?} outside the box")))?;
    let dim = cube.dim();
    let n = cube.len();
    let env_idx: Vec<usize> = cube.iter().map(|y| env.index_of(&y).expect("inside")).collect();
    let hard: Vec<bool> = env_idx.iter().map(|&i| env.hard_core[i]).collect();
    let jump_rate = 2.0 * dim as f64 * kappa;
    let rate: Vec<f64> = env_idx
        .iter()
        .map(|&i| if env.hard_core[i] { 0.0 } else { jump_rate + env.v_plus[i] + env.v_minus[i] })
        .collect();
    let mut state =
        ParticleState { domain: domain.clone(), eta: vec![0; n], time: 0.0, counts: EventCounts::default() };
    let mut trajectory = opts.record_trajectory.then(Vec::new);
    if hard[start] {
        return Ok(ParticleRun { t_end, zeta: 0, counts: state.counts, truncated: false, trajectory });
    }
    let mut tree = Fenwick::new(n);
    let mut zeta: u64 = 1;
    state.eta[start] = 1;
    tree.add(start, rate[start]);
    if let Some(tr) = trajectory.as_mut() {
        tr.push((0.0, 1));
    }
    let mut truncated = false;
    let mut coords = vec![0i64; dim];
    loop {
        let total = tree.total();
        if zeta == 0 || total <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let dt = wait / total;
        if state.time + dt >= t_end {
            break;
        }
        state.time += dt;
        let site = tree.find(rng.gen::<f64>() * total);
        let site = if state.eta[site] == 0 { nearest_occupied(&state.eta, site) } else { site };
        let e = env_idx[site];
        let u = rng.gen::<f64>() * rate[site];
        if u < env.v_plus[e] {
            state.eta[site] += 1;
            tree.add(site, rate[site]);
            zeta += 1;
            state.counts.branch += 1;
        } else if u < env.v_plus[e] + env.v_minus[e] {
            state.eta[site] -= 1;
            tree.add(site, -rate[site]);
            zeta -= 1;
            state.counts.death += 1;
        } else {
            state.counts.jump += 1;
            state.eta[site] -= 1;
            tree.add(site, -rate[site]);
            let dir = rng.gen_range(0..2 * dim);
            let here = cube.coords_of(site);
            coords.copy_from_slice(&here);
            coords[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            match cube.index_of(&coords) {
                None => {
                    zeta -= 1;
                    state.counts.boundary_exit += 1;
                }
                Some(j) if hard[j] => {
                    zeta -= 1;
                    state.counts.obstacle_kill += 1;
                }
                Some(j) => {
                    state.eta[j] += 1;
                    tree.add(j, rate[j]);
                }
            }
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push((state.time, zeta));
        }
        if zeta > opts.population_cap {
            truncated = true;
            break;
        }
    }
    Ok(ParticleRun { t_end, zeta, counts: state.counts, truncated, trajectory })
}

/// Guard against rounding in the tree picking an empty site.
fn nearest_occupied(eta: &[u64], site: usize) -> usize {
    (0..eta.len()).filter(|&i| eta[i] > 0).min_by_key(|&i| i.abs_diff(site)).expect("population is positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_runs: usize,
    pub truncated_runs: usize,
}

/// All runs of `mean_population`, in run order.
#[allow(clippy::too_many_arguments)]
pub fn run_many(
    env: &Environment,
    domain: &BoxDomain,
    kappa: f64,
    t: f64,
    x: &[i64],
    n_runs: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<Vec<ParticleRun>> {
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "particle-run", i as u64);
            gillespie_run(env, domain, kappa, t, x, opts, &mut rng)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn mean_population(
    env: &Environment,
    domain: &BoxDomain,
    kappa: f64,
    t: f64,
    x: &[i64],
    n_runs: usize,
    seed: u64,
) -> Result<PopulationEstimate> {
    let runs = run_many(env, domain, kappa, t, x, n_runs, seed, RunOptions::default())?;
    let z: Vec<f64> = runs.iter().map(|r| r.zeta as f64).collect();
    Ok(PopulationEstimate {
        mean: crate::stats::mean(&z),
        stderr: crate::stats::std_dev(&z) / (n_runs as f64).sqrt(),
        n_runs,
        truncated_runs: runs.iter().filter(|r| r.truncated).count(),
    })
}

/// Margins of the two growth bounds at scale `n` (box of radius `n` at the
/// origin): `E ζ ≤ e^{v_n t}` and, for `n ≥ 2κt`, the boundary-flux bound
/// `E ζ̄ ≤ 4d exp((v_n − 2κ)t − n log(n/(2eκt)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBoundReport {
    pub n: usize,
    pub t: f64,
    pub v_n: f64,
    pub mean_zeta: f64,
    pub ucl_zeta: f64,
    pub bound_zeta: f64,
    pub mean_flux: f64,
    pub ucl_flux: f64,
    /// `None` when `n < 2κt`.
    pub bound_flux: Option<f64>,
    pub truncated_runs: usize,
}

impl GrowthBoundReport {
    pub fn holds(&self) -> bool {
        self.ucl_zeta <= self.bound_zeta && self.bound_flux.is_none_or(|b| self.ucl_flux <= b)
    }
}

/// One-sided 97.5% normal quantile.
const Z975: f64 = 1.959963984540054;

pub fn growth_bound_check(
    env: &Environment,
    n: usize,
    kappa: f64,
    t: f64,
    n_runs: usize,
    seed: u64,
) -> Result<GrowthBoundReport> {
    let domain = BoxDomain::centered(env.dim(), n);
    let v_n =
        domain.cube.iter().map(|y| env.index_of(&y).map(|i| env.v_plus[i]).unwrap_or(f64::NAN)).fold(0.0, f64::max);
    let origin = vec![0; env.dim()];
    let runs = run_many(env, &domain, kappa, t, &origin, n_runs, seed, RunOptions::default())?;
    let zeta: Vec<f64> = runs.iter().map(|r| r.zeta as f64).collect();
    let flux: Vec<f64> = runs.iter().map(|r| r.counts.boundary_exit as f64).collect();
    let ucl = |v: &[f64]| crate::stats::mean(v) + Z975 * crate::stats::std_dev(v) / (v.len() as f64).sqrt();
    let nf = n as f64;
    let bound_flux = (kappa > 0.0 && t > 0.0 && nf >= 2.0 * kappa * t).then(|| {
        4.0 * env.dim() as f64
            * ((v_n - 2.0 * kappa) * t - nf * (nf / (2.0 * std::f64::consts::E * kappa * t)).ln()).exp()
    });
    Ok(GrowthBoundReport {
        n,
        t,
        v_n,
        mean_zeta: crate::stats::mean(&zeta),
        ucl_zeta: ucl(&zeta),
        bound_zeta: (v_n * t).exp(),
        mean_flux: crate::stats::mean(&flux),
        ucl_flux: ucl(&flux),
        bound_flux,
        truncated_runs: runs.iter().filter(|r| r.truncated).count(),
    })
}

/// `runs.csv`: one row per run.
pub fn write_runs(path: &Path, runs: &[ParticleRun]) -> Result<()> {
    let rows: Vec<Vec<String>> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i.to_string(),
                fmt_f64(r.t_end),
                r.zeta.to_string(),
                r.counts.branch.to_string(),
                r.counts.death.to_string(),
                r.counts.jump.to_string(),
                r.counts.boundary_exit.to_string(),
                r.counts.obstacle_kill.to_string(),
                r.truncated.to_string(),
            ]
        })
        .collect();
    write_table(
        path,
        &["run_id", "t_end", "zeta", "branch", "death", "jump", "boundary_exit", "obstacle_kill", "truncated"],
        &rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SplitOptions;
    use crate::lattice::Cube;
    use rand::SeedableRng;

    fn env1(values: &[f64]) -> Environment {
        let r = (values.len() - 1) / 2;
        Environment::from_potential(Cube::centered(1, r), values, SplitOptions::default()).unwrap()
    }

    #[test]
    fn fenwick_search() {
        let mut f = Fenwick::new(5);
        for (i, r) in [1.0, 0.0, 2.0, 0.5, 1.5].iter().enumerate() {
            f.add(i, *r);
        }
        assert_eq!(f.total(), 5.0);
        assert_eq!(f.find(0.5), 0);
        assert_eq!(f.find(1.0), 2);
        assert_eq!(f.find(3.2), 3);
        assert_eq!(f.find(4.9), 4);
    }

    #[test]
    fn no_events_without_rates() {
        let env = env1(&[0.0; 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r =
            gillespie_run(&env, &BoxDomain::centered(1, 1), 0.0, 5.0, &[0], RunOptions::default(), &mut rng).unwrap();
        assert_eq!(r.zeta, 1);
        assert_eq!(r.counts, EventCounts::default());
    }

    #[test]
    fn yule_mean() {
        let env = env1(&[0.8]);
        let est = mean_population(&env, &BoxDomain::centered(1, 0), 0.0, 1.5, &[0], 10_000, 4).unwrap();
        let exact = (0.8f64 * 1.5).exp();
        assert!((est.mean - exact).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn pure_death_survival() {
        let env = env1(&[-0.6]);
        let runs =
            run_many(&env, &BoxDomain::centered(1, 0), 0.0, 2.0, &[0], 10_000, 5, RunOptions::default()).unwrap();
        let alive = runs.iter().filter(|r| r.zeta == 1).count() as u64;
        let ci = crate::stats::wilson(alive, 10_000, 3.0);
        assert!(ci.contains((-1.2f64).exp()));
    }

    #[test]
    fn accounting_identity_along_trajectories() {
        let env = crate::env::sample_environment(crate::env::TailFamily::Weibull { rho: 2.0 }, 1, 4, 3).unwrap();
        let opts = RunOptions { record_trajectory: true, ..Default::default() };
        for s in 0..50 {
            let mut rng = stream(1, "acct", s);
            let r = gillespie_run(&env, &BoxDomain::centered(1, 4), 1.0, 2.0, &[0], opts, &mut rng).unwrap();
            let c = r.counts;
            assert_eq!(r.zeta as i64, 1 + c.branch as i64 - c.death as i64 - c.boundary_kill() as i64);
            let tr = r.trajectory.unwrap();
            assert!(tr.windows(2).all(|w| w[0].0 <= w[1].0));
            assert_eq!(tr.last().unwrap().1, r.zeta);
        }
    }

    #[test]
    fn hard_core_start_and_cap() {
        let env = env1(&[0.0, f64::NEG_INFINITY, 3.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let dom = BoxDomain::centered(1, 1);
        let r = gillespie_run(&env, &dom, 1.0, 1.0, &[0], RunOptions::default(), &mut rng).unwrap();
        assert_eq!(r.zeta, 0);
        let env = env1(&[5.0]);
        let opts = RunOptions { population_cap: 100, record_trajectory: false };
        let r = gillespie_run(&env, &BoxDomain::centered(1, 0), 0.0, 10.0, &[0], opts, &mut rng).unwrap();
        assert!(r.truncated);
    }

    #[test]
    fn growth_bounds_hold_without_branching() {
        let env = env1(&[-0.2; 21]);
        let rep = growth_bound_check(&env, 6, 1.0, 1.0, 2000, 8).unwrap();
        assert_eq!(rep.bound_zeta, 1.0);
        assert!(rep.holds(), "{rep:?}");
    }
}
