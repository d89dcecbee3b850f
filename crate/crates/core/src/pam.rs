//! Truncated and untruncated quenched first moments: solutions of
//! `∂m/∂t = κΔm + v·m` on a box with Dirichlet zero outside the active set.
//!
//! Values are carried as a mantissa vector and a shared log offset so that
//! `e^{vt}` growth never overflows.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::rate_i_inverse;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::Cube;
use crate::operator::{ActiveSet, BoxDomain, Operator};
use crate::stats::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    /// Dense eigendecomposition for small active sets, Krylov otherwise.
    Auto,
    DenseEig,
    Krylov,
    Explicit,
}

impl std::str::FromStr for SolveMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SolveMethod::Auto),
            "dense-eig" | "dense" => Ok(SolveMethod::DenseEig),
            "krylov" | "krylov-expm" => Ok(SolveMethod::Krylov),
            "explicit" => Ok(SolveMethod::Explicit),
            _ => Err(Error::invalid(format!("unknown solve method {s:?}"))),
        }
    }
}

/// Largest active set handled by the dense eigensolver.
pub const DENSE_LIMIT: usize = 4000;
/// Largest active set `Auto` sends to the dense eigensolver.
const AUTO_DENSE_LIMIT: usize = 600;

/// `m̃_U(·, t)` on a box, `m(x) = mantissa[x] · e^{log_offset}` (box order).
#[derive(Debug, Clone)]
pub struct MomentField {
    pub domain: BoxDomain,
    pub t: f64,
    pub kappa: f64,
    pub mantissa: Vec<f64>,
    pub log_offset: f64,
}

impl MomentField {
    pub fn value_at(&self, x: &[i64]) -> Option<f64> {
        self.domain.cube.index_of(x).map(|i| self.mantissa[i] * self.log_offset.exp())
    }

    pub fn ln_at(&self, x: &[i64]) -> Option<f64> {
        self.domain.cube.index_of(x).map(|i| self.mantissa[i].ln() + self.log_offset)
    }

    /// `log Σ_x m̃(x, t)`.
    pub fn ln_total(&self) -> f64 {
        self.mantissa.iter().sum::<f64>().ln() + self.log_offset
    }
}

/// Renormalise `v` so that its maximum is 1; returns the log of the factor
/// removed (or `None` if `v` vanishes).
fn renormalize(v: &mut [f64]) -> Option<f64> {
    let m = v.iter().copied().fold(0.0, f64::max);
    if !(m > 0.0) || !m.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x /= m;
    }
    Some(m.ln())
}

fn check_time(kappa: f64, t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("t must be finite and nonnegative, got {t}")));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("κ must be finite and nonnegative, got {kappa}")));
    }
    Ok(())
}

/// Solve for the truncated first moment on `domain`.
pub fn solve_truncated(
    env: &Environment,
    domain: &BoxDomain,
    kappa: f64,
    t: f64,
    method: SolveMethod,
    tol: f64,
) -> Result<MomentField> {
    check_time(kappa, t)?;
    let active = ActiveSet::build(env, domain)?;
    let n_box = domain.cube.len();
    let mut field = MomentField { domain: domain.clone(), t, kappa, mantissa: vec![0.0; n_box], log_offset: 0.0 };
    if active.is_empty() {
        return Ok(field);
    }
    let local: Vec<f64>;
    let log_offset;
    if t == 0.0 {
        local = vec![1.0; active.len()];
        log_offset = 0.0;
    } else if kappa == 0.0 {
        let vt: Vec<f64> = active.env_index.iter().map(|&ei| env.v(ei) * t).collect();
        let top = vt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        local = vt.iter().map(|x| (x - top).exp()).collect();
        log_offset = top;
    } else {
        let op = Operator::new(env, active.clone(), kappa);
        let method = match method {
            SolveMethod::Auto if op.len() <= AUTO_DENSE_LIMIT => SolveMethod::DenseEig,
            SolveMethod::Auto => SolveMethod::Krylov,
            m => m,
        };
        let (v, off) = match method {
            SolveMethod::DenseEig => {
                if op.len() > DENSE_LIMIT {
                    return Err(Error::invalid(format!(
                        "dense eigensolver limited to {DENSE_LIMIT} sites, active set has {}",
                        op.len()
                    )));
                }
                DensePropagator::new(&op).propagate_ones(t)
            }
            SolveMethod::Krylov => krylov_expm(&op, &vec![1.0; op.len()], t, tol)?,
            SolveMethod::Explicit => explicit_propagate(&op, t, tol)?,
            SolveMethod::Auto => unreachable!(),
        };
        local = v;
        log_offset = off;
    }
    let mut out = local;
    let extra = renormalize(&mut out);
    match extra {
        Some(e) => {
            for (i, &bi) in active.box_index.iter().enumerate() {
                field.mantissa[bi] = out[i];
            }
            field.log_offset = log_offset + e;
        }
        None => field.log_offset = 0.0,
    }
    Ok(field)
}

/// Eigendecomposition of `κΔ + v`, reusable for many times.
pub struct DensePropagator {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `(ψ_n, 1)` for each eigenvector.
    overlaps: Vec<f64>,
}

impl DensePropagator {
    pub fn new(op: &Operator) -> Self {
        Self::from_matrix(op.to_dense())
    }

    pub fn from_matrix(a: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(a);
        let overlaps = eig.eigenvectors.column_iter().map(|c| c.sum()).collect();
        Self { eigenvalues: eig.eigenvalues.iter().copied().collect(), eigenvectors: eig.eigenvectors, overlaps }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `e^{tA}·1` as (vector, log offset).
    pub fn propagate_ones(&self, t: f64) -> (Vec<f64>, f64) {
        let top = self.max_eigenvalue();
        let n = self.eigenvalues.len();
        let mut out = vec![0.0; n];
        for (k, col) in self.eigenvectors.column_iter().enumerate() {
            let c = ((self.eigenvalues[k] - top) * t).exp() * self.overlaps[k];
            if c == 0.0 {
                continue;
            }
            for i in 0..n {
                out[i] += c * col[i];
            }
        }
        for x in &mut out {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        (out, top * t)
    }

    /// `log (e^{tA}·1)_i` for one site.
    pub fn ln_at(&self, i: usize, t: f64) -> f64 {
        let top = self.max_eigenvalue();
        let mut acc = 0.0;
        for (k, col) in self.eigenvectors.column_iter().enumerate() {
            acc += ((self.eigenvalues[k] - top) * t).exp() * self.overlaps[k] * col[i];
        }
        if acc <= 0.0 {
            f64::NEG_INFINITY
        } else {
            acc.ln() + top * t
        }
    }
}

/// `e^{tA} b` by restarted Lanczos with full reorthogonalisation.
pub fn krylov_expm(op: &Operator, b: &[f64], t: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    const MAX_DIM: usize = 80;
    let n = op.len();
    let (lo, hi) = op.gershgorin();
    let half = 0.5 * (hi - lo);
    let steps = ((t * half / 12.0).ceil() as usize).max(1);
    let h = t / steps as f64;
    let mut w = b.to_vec();
    let mut log_offset = renormalize(&mut w).ok_or(Error::EmptyActiveSet)?;
    let mut scratch = vec![0.0; n];
    for _ in 0..steps {
        let beta0 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut basis: Vec<Vec<f64>> = vec![w.iter().map(|x| x / beta0).collect()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut coeffs: Option<(Vec<f64>, f64)> = None;
        for j in 0..MAX_DIM.min(n) {
            op.apply(&basis[j], &mut scratch);
            let a = dot(&scratch, &basis[j]);
            alpha.push(a);
            let mut r = scratch.clone();
            for q in &basis {
                let c = dot(&r, q);
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
            }
            let b_next = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (y, theta_max) = small_expm_e1(&alpha, &beta, h);
            let m = alpha.len();
            let err = b_next * h * y[m - 1].abs() / y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let breakdown = b_next <= 1e-13 * (lo.abs().max(hi.abs()).max(1.0));
            if breakdown || err < 1e-3 * tol || m == n {
                coeffs = Some((y, theta_max));
                break;
            }
            beta.push(b_next);
            basis.push(r.iter().map(|x| x / b_next).collect());
        }
        let (y, theta_max) = coeffs.ok_or(Error::NotConverged { residual: f64::NAN })?;
        let mut next = vec![0.0; n];
        for (k, q) in basis.iter().enumerate().take(y.len()) {
            for i in 0..n {
                next[i] += y[k] * q[i];
            }
        }
        for x in &mut next {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        log_offset += h * theta_max + beta0.ln();
        match renormalize(&mut next) {
            Some(e) => log_offset += e,
            None => return Ok((vec![0.0; n], 0.0)),
        }
        w = next;
    }
    Ok((w, log_offset))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `e^{h(T − θ_max)} e₁` for the tridiagonal `T`; returns it with `θ_max`.
fn small_expm_e1(alpha: &[f64], beta: &[f64], h: f64) -> (Vec<f64>, f64) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y = vec![0.0; m];
    for (k, col) in eig.eigenvectors.column_iter().enumerate() {
        let c = ((eig.eigenvalues[k] - top) * h).exp() * col[0];
        for i in 0..m {
            y[i] += c * col[i];
        }
    }
    (y, top)
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Adaptive explicit integration of `y' = Ay`, `y(0) = 1`, renormalising
/// after every accepted step.
#[allow(clippy::needless_range_loop)]
pub fn explicit_propagate(op: &Operator, t: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    const MAX_STEPS: usize = 2_000_000;
    let n = op.len();
    let (lo, hi) = op.gershgorin();
    let spectral = lo.abs().max(hi.abs()).max(1e-300);
    let h_cap = 3.0 / spectral;
    let rtol = (tol * 1e-2).max(1e-14);
    let mut y = vec![1.0; n];
    let mut log_offset = 0.0;
    let mut time = 0.0;
    let mut h = h_cap.min(t);
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut steps = 0usize;
    let _ = DP_C;
    while time < t {
        steps += 1;
        if steps > MAX_STEPS || h < t * 1e-13 {
            return Err(Error::StepUnderflow { max_abs_v: op.max_abs_potential() });
        }
        let h_try = h.min(t - time);
        op.apply(&y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h_try * DP_A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            op.apply(&stage, &mut tail[0]);
        }
        // stage holds the 5th-order solution (row 6 of the tableau = weights).
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += DP_E[j] * kj[i];
            }
            let scale = rtol * (1.0 + y[i].abs().max(stage[i].abs()));
            err = err.max((h_try * e).abs() / scale);
        }
        if err <= 1.0 {
            time += h_try;
            y.copy_from_slice(&stage);
            for v in &mut y {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            match renormalize(&mut y) {
                Some(e) => log_offset += e,
                None => return Ok((vec![0.0; n], 0.0)),
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h_try * factor).min(h_cap);
    }
    Ok((y, log_offset))
}

/// Smallest radius `R` whose exit-time tail satisfies
/// `κt·I(R/(2κt)) − dκt ≥ log(1/tol)`.
pub fn truncation_radius(kappa: f64, t: f64, dim: usize, tol: f64) -> usize {
    if kappa == 0.0 || t == 0.0 {
        return 0;
    }
    let kt = kappa * t;
    let level = ((1.0 / tol).ln() + dim as f64 * kt) / kt;
    let y = rate_i_inverse(level);
    ((2.0 * kt * y).ceil() as usize).max(1)
}

/// Untruncated quenched first moment at a single site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiteMoment {
    pub mantissa: f64,
    pub log_offset: f64,
    pub radius: usize,
}

impl SiteMoment {
    pub fn ln(&self) -> f64 {
        self.mantissa.ln() + self.log_offset
    }

    pub fn value(&self) -> f64 {
        self.mantissa * self.log_offset.exp()
    }
}

pub fn solve_untruncated(env: &Environment, x: &[i64], kappa: f64, t: f64, tol: f64) -> Result<SiteMoment> {
    check_time(kappa, t)?;
    let i = env
        .index_of(x)
        .ok_or(Error::WindowTooSmall { needed: crate::lattice::sup_norm(x) as usize, available: env.radius() })?;
    if env.hard_core[i] {
        return Ok(SiteMoment { mantissa: 0.0, log_offset: 0.0, radius: 0 });
    }
    if kappa == 0.0 || t == 0.0 {
        return Ok(SiteMoment { mantissa: 1.0, log_offset: env.v(i) * t, radius: 0 });
    }
    let radius = truncation_radius(kappa, t, env.dim(), tol);
    let domain = BoxDomain::new(x.to_vec(), radius);
    if !domain.cube.inside(&env.window) {
        return Err(Error::WindowTooSmall {
            needed: crate::lattice::sup_norm(x) as usize + radius,
            available: env.radius(),
        });
    }
    let field = solve_truncated(env, &domain, kappa, t, SolveMethod::Auto, tol)?;
    let bi = domain.cube.index_of(x).expect("center");
    Ok(SiteMoment { mantissa: field.mantissa[bi], log_offset: field.log_offset, radius })
}

/// `log m^L(0,t) = log( |Λ_L|^{-1} Σ_{x∈Λ_L} m(x,t) )`.
pub fn empirical_average(env: &Environment, l: usize, kappa: f64, t: f64, tol: f64) -> Result<f64> {
    let cube = Cube::centered(env.dim(), l);
    let logs: Vec<f64> = (0..cube.len())
        .into_par_iter()
        .map(|i| solve_untruncated(env, &cube.coords_of(i), kappa, t, tol).map(|m| m.ln()))
        .collect::<Result<_>>()?;
    Ok(log_sum_exp(&logs) - (cube.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_environment, SplitOptions, TailFamily};
    use rand::{Rng, SeedableRng};

    fn env1(values: &[f64]) -> Environment {
        let r = (values.len() - 1) / 2;
        Environment::from_potential(Cube::centered(1, r), values, SplitOptions::default()).unwrap()
    }

    /// Dense `expm` by scaling and squaring a Taylor series, as an oracle.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = a.iter().map(|x| x.abs()).sum::<f64>();
        let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let scaled = a / 2f64.powi(s);
        let n = a.nrows();
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn singleton_box_decays_at_rate_two() {
        let env = env1(&[0.0, 0.0, 0.0]);
        let f = solve_truncated(&env, &BoxDomain::centered(1, 0), 1.0, 0.5, SolveMethod::DenseEig, 1e-12).unwrap();
        assert!((f.value_at(&[0]).unwrap() - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn three_site_box_matches_matrix_exponential() {
        let env = env1(&[0.0; 5]);
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -2.0]);
        let oracle = expm_taylor(&a) * nalgebra::DVector::from_element(3, 1.0);
        for m in [SolveMethod::DenseEig, SolveMethod::Krylov, SolveMethod::Explicit] {
            let f = solve_truncated(&env, &BoxDomain::centered(1, 1), 1.0, 1.0, m, 1e-12).unwrap();
            for (k, x) in [-1i64, 0, 1].iter().enumerate() {
                let got = f.value_at(&[*x]).unwrap();
                assert!((got - oracle[k]).abs() < 1e-10, "{m:?} x={x}: {got} vs {}", oracle[k]);
            }
        }
    }

    #[test]
    fn zero_diffusion_is_sitewise_exponential() {
        let env = sample_environment(TailFamily::Weibull { rho: 2.0 }, 2, 3, 4).unwrap();
        let f = solve_truncated(&env, &BoxDomain::centered(2, 3), 0.0, 2.5, SolveMethod::Auto, 1e-10).unwrap();
        for x in env.window.iter() {
            let expect = (env.v_at(&x).unwrap() * 2.5).exp();
            let got = f.value_at(&x).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn mantissa_normalisation_and_positivity() {
        let env = sample_environment(TailFamily::Weibull { rho: 1.5 }, 1, 20, 9).unwrap();
        let f = solve_truncated(&env, &BoxDomain::centered(1, 20), 1.0, 30.0, SolveMethod::Auto, 1e-10).unwrap();
        let max = f.mantissa.iter().copied().fold(0.0, f64::max);
        assert!(max >= (-1.0f64).exp() && max <= 1f64.exp());
        assert!(f.mantissa.iter().all(|m| *m >= 0.0));
        assert!(f.log_offset > 30.0);
    }

    #[test]
    fn obstacles_vanish_and_start_at_one() {
        let env = env1(&[0.5, f64::NEG_INFINITY, 1.0, 0.0, 0.2]);
        let f = solve_truncated(&env, &BoxDomain::centered(1, 2), 1.0, 0.0, SolveMethod::Auto, 1e-10).unwrap();
        assert_eq!(f.value_at(&[-1]).unwrap(), 0.0);
        assert_eq!(f.value_at(&[0]).unwrap(), 1.0);
        let g = solve_truncated(&env, &BoxDomain::centered(1, 2), 1.0, 1.0, SolveMethod::Auto, 1e-10).unwrap();
        assert_eq!(g.value_at(&[-1]).unwrap(), 0.0);
    }

    #[test]
    fn methods_agree_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for case in 0..200 {
            let dim = 1 + case % 2;
            let radius = if dim == 1 { rng.gen_range(1..40) } else { rng.gen_range(1..6) };
            let env = sample_environment(TailFamily::Weibull { rho: 2.0 }, dim, radius, case as u64).unwrap();
            let t = rng.gen_range(0.1..3.0);
            let kappa = rng.gen_range(0.1..2.0);
            let dom = BoxDomain::centered(dim, radius);
            let dense = solve_truncated(&env, &dom, kappa, t, SolveMethod::DenseEig, 1e-9).unwrap();
            for m in [SolveMethod::Krylov, SolveMethod::Explicit] {
                let f = solve_truncated(&env, &dom, kappa, t, m, 1e-9).unwrap();
                for x in dom.cube.iter() {
                    let (a, b) = (dense.ln_at(&x).unwrap(), f.ln_at(&x).unwrap());
                    assert!(
                        (a - b).abs() < 1e-7,
                        "case {case} {m:?} dim={dim} r={radius} t={t} k={kappa} x={x:?}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn stiff_potential_reports_underflow() {
        let env = env1(&[0.0, -1e12, 0.0]);
        let r = solve_truncated(&env, &BoxDomain::centered(1, 1), 1.0, 1.0, SolveMethod::Explicit, 1e-10);
        match r {
            Err(Error::StepUnderflow { max_abs_v }) => assert_eq!(max_abs_v, 1e12),
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn domain_monotonicity_and_padding() {
        let env = sample_environment(TailFamily::Weibull { rho: 2.0 }, 1, 12, 21).unwrap();
        let small = solve_truncated(&env, &BoxDomain::centered(1, 4), 1.0, 2.0, SolveMethod::Auto, 1e-12).unwrap();
        let big = solve_truncated(&env, &BoxDomain::centered(1, 8), 1.0, 2.0, SolveMethod::Auto, 1e-12).unwrap();
        for x in -4..=4 {
            assert!(small.value_at(&[x]).unwrap() <= big.value_at(&[x]).unwrap() * (1.0 + 1e-12));
        }
        // Surround the 9-site box with obstacles: the solution must not change.
        let mut padded = env.restrict(&Cube::centered(1, 6)).unwrap();
        for x in [-6i64, -5, 5, 6] {
            let i = padded.index_of(&[x]).unwrap();
            padded.hard_core[i] = true;
        }
        let p = solve_truncated(&padded, &BoxDomain::centered(1, 6), 1.0, 2.0, SolveMethod::Auto, 1e-12).unwrap();
        for x in -4..=4 {
            let (a, b) = (small.value_at(&[x]).unwrap(), p.value_at(&[x]).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn truncation_radius_matches_inverted_rate() {
        let r = truncation_radius(1.0, 2.0, 1, 1e-8);
        let target = 8.0 * 10f64.ln();
        let smallest = (1..200).find(|&rr| 2.0 * crate::analytics::rate_i(rr as f64 / 4.0) - 2.0 > target).unwrap();
        assert!(r >= smallest);
        assert!(r <= smallest + 1);
    }

    #[test]
    fn untruncated_is_stable_under_enlargement() {
        let env = sample_environment(TailFamily::Weibull { rho: 2.0 }, 1, 80, 5).unwrap();
        let m = solve_untruncated(&env, &[0], 1.0, 2.0, 1e-8).unwrap();
        let bigger = solve_truncated(&env, &BoxDomain::centered(1, m.radius + 4), 1.0, 2.0, SolveMethod::Auto, 1e-12)
            .unwrap()
            .value_at(&[0])
            .unwrap();
        assert!(m.value() <= bigger * (1.0 + 1e-12));
        assert!((bigger - m.value()).abs() <= 1e-8 * bigger);
        let k0 = solve_untruncated(&env1(&[2.0]), &[0], 0.0, 3.0, 1e-8).unwrap();
        assert!((k0.value() - 6f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn untruncated_reports_needed_radius() {
        let env = env1(&[0.0; 5]);
        match solve_untruncated(&env, &[0], 1.0, 2.0, 1e-8) {
            Err(Error::WindowTooSmall { needed, available: 2 }) => assert!(needed > 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empirical_average_at_zero_diffusion() {
        let env = sample_environment(TailFamily::Weibull { rho: 2.0 }, 1, 10, 2).unwrap();
        let got = empirical_average(&env, 10, 0.0, 1.5, 1e-8).unwrap();
        let logs: Vec<f64> = env.window.iter().map(|x| env.v_at(&x).unwrap() * 1.5).collect();
        let expect = log_sum_exp(&logs) - 21f64.ln();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_is_bounded_by_exponential() {
        let env = env1(&[0.7; 61]);
        let got = empirical_average(&env, 5, 1.0, 1.0, 1e-8).unwrap();
        assert!(got <= 0.7 + 1e-12);
        assert!(got > 0.7 - 1e-6);
    }
}
