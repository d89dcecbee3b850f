//! Principal eigenpairs of `κΔ + v` on boxes and the spectral bounds
//! `Σ_z m̃_U(z,t) ≥ e^{tλ₀}` and `m̃_U(x,t) ≤ √|U| e^{tλ₀}`.

use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::operator::{ActiveSet, BoxDomain, Operator};
use crate::output::{fmt_f64, write_table};
use crate::pam::{solve_truncated, SolveMethod, DENSE_LIMIT};

/// Eigenvalue gap below which `λ₀` is treated as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectrumSlice {
    pub domain: BoxDomain,
    pub kappa: f64,
    /// Eigenvalues in decreasing order. Only `λ₀` for the iterative path.
    pub eigenvalues: Vec<f64>,
    /// `ψ₀` in box order, zero on hard-core sites, `Σψ₀ > 0`, `‖ψ₀‖₂ = 1`.
    pub psi0: Vec<f64>,
    /// `‖(κΔ+v)ψ₀ − λ₀ψ₀‖₂`.
    pub residual: f64,
    pub active_len: usize,
}

impl SpectrumSlice {
    pub fn lambda0(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `λ₀ − λ₁` when known.
    pub fn gap(&self) -> Option<f64> {
        (self.eigenvalues.len() > 1).then(|| self.eigenvalues[0] - self.eigenvalues[1])
    }

    pub fn is_degenerate(&self) -> bool {
        self.gap().is_some_and(|g| g < DEGENERATE_GAP)
    }
}

pub fn principal_eigen(env: &Environment, domain: &BoxDomain, kappa: f64) -> Result<SpectrumSlice> {
    let active = ActiveSet::build(env, domain)?;
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let op = Operator::new(env, active, kappa);
    let (eigenvalues, mut local) = if op.len() <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(op.to_dense());
        let mut order: Vec<usize> = (0..op.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vec: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
        (vals, vec)
    } else {
        let (l, v) = power_iteration(&op)?;
        (vec![l], v)
    };
    if local.iter().sum::<f64>() < 0.0 {
        for x in &mut local {
            *x = -*x;
        }
    }
    let norm = local.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut local {
        *x /= norm;
    }
    let residual = residual(&op, eigenvalues[0], &local);
    let mut psi0 = vec![0.0; domain.cube.len()];
    for (i, &bi) in op.active.box_index.iter().enumerate() {
        psi0[bi] = local[i];
    }
    Ok(SpectrumSlice { domain: domain.clone(), kappa, eigenvalues, psi0, residual, active_len: op.len() })
}

fn residual(op: &Operator, lambda: f64, v: &[f64]) -> f64 {
    let mut y = vec![0.0; v.len()];
    op.apply(v, &mut y);
    y.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt()
}

/// Power iteration on `A − σI` with `σ` the Gershgorin lower bound, so the
/// shifted operator is nonnegative definite and its top eigenvalue is `λ₀ − σ`.
fn power_iteration(op: &Operator) -> Result<(f64, Vec<f64>)> {
    const MAX_ITER: usize = 1_000_000;
    const TARGET: f64 = 1e-10;
    let n = op.len();
    let (sigma, _) = op.gershgorin();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut lambda = f64::NAN;
    let mut res = f64::INFINITY;
    for it in 0..MAX_ITER {
        op.apply(&v, &mut y);
        for i in 0..n {
            y[i] -= sigma * v[i];
        }
        let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..n {
            v[i] = y[i] / norm;
        }
        if it % 16 == 15 {
            op.apply(&v, &mut y);
            lambda = y.iter().zip(&v).map(|(a, b)| a * b).sum();
            res = residual(op, lambda, &v);
            if res <= TARGET {
                return Ok((lambda, v));
            }
        }
    }
    let _ = lambda;
    Err(Error::NotConverged { residual: res })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichReport {
    pub t: f64,
    pub lambda0: f64,
    pub active_len: usize,
    /// `log Σ m̃ − tλ₀`; the lower bound holds iff this is ≥ 0.
    pub lower_margin: f64,
    /// `min_x (½ log|U| + tλ₀ − log m̃(x))`; the upper bound holds iff ≥ 0.
    pub upper_margin: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_margin >= 0.0 && self.upper_margin >= 0.0
    }

    pub fn strictly_holds(&self) -> bool {
        self.lower_margin > 0.0 && self.upper_margin > 0.0
    }
}

/// Check both spectral bounds with margins in log space; failures are
/// reported through the margins.
pub fn verify_sandwich(env: &Environment, domain: &BoxDomain, kappa: f64, t: f64) -> Result<SandwichReport> {
    let spec = principal_eigen(env, domain, kappa)?;
    let field = solve_truncated(env, domain, kappa, t, SolveMethod::Auto, 1e-12)?;
    let lambda0 = spec.lambda0();
    let lower_margin = field.ln_total() - t * lambda0;
    let half_ln_u = 0.5 * (spec.active_len as f64).ln();
    let upper_margin = field
        .mantissa
        .iter()
        .filter(|m| **m > 0.0)
        .map(|m| half_ln_u + t * lambda0 - (m.ln() + field.log_offset))
        .fold(f64::INFINITY, f64::min);
    Ok(SandwichReport { t, lambda0, active_len: spec.active_len, lower_margin, upper_margin })
}

/// `spectrum.csv` with columns `k, lambda_k`.
pub fn write_spectrum(path: &Path, slice: &SpectrumSlice) -> Result<()> {
    let rows: Vec<Vec<String>> =
        slice.eigenvalues.iter().enumerate().map(|(k, l)| vec![k.to_string(), fmt_f64(*l)]).collect();
    write_table(path, &["k", "lambda_k"], &rows)
}
