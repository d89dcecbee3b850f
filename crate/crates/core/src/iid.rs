//! Zero-diffusion block sums `m^L = N^{-1} Σ_{i≤N} e^{t v_i}` with i.i.d.
//! site potentials, for `N` far beyond what can be enumerated.
//!
//! Up to `exact_limit` sites every value is drawn. Above it the sum is split
//! at `s₀ = log(N/M)` in the exponential variable: the `K ~ Bin(N, e^{−s₀})`
//! tail sites are drawn exactly (`s = s₀ + Exp(1)`), and the bulk sum is drawn
//! as a normal variable with its exact conditional mean and variance.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::env::PotentialLaw;
use crate::error::{Error, Result};
use crate::quadrature::{log_laplace_below, scaled};

pub const EXACT_LIMIT: u64 = 1 << 20;
pub const TAIL_COUNT: f64 = 1e5;

/// Single-site zero-diffusion references: `⟨e^{tv}⟩ = e^{H(t)}` and the
/// standard deviation `√(e^{H(2t)} − e^{2H(t)})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IidReference {
    pub h: f64,
    pub h2: f64,
    pub mean: f64,
    pub sd: f64,
}

pub fn iid_reference<L: PotentialLaw + ?Sized>(law: &L, t: f64) -> Result<IidReference> {
    let h = law.cumulant_h(t)?;
    let h2 = law.cumulant_h(2.0 * t)?;
    let excess = (h2 - 2.0 * h).max(0.0);
    Ok(IidReference { h, h2, mean: h.exp(), sd: h.exp() * excess.exp_m1().sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BlockMode {
    Exact,
    Hybrid {
        s0: f64,
        p_tail: f64,
        /// Conditional mean, sd and skewness of `e^{tv}` given `s < s₀`.
        bulk_mean: f64,
        bulk_sd: f64,
        bulk_skew: f64,
    },
}

pub struct BlockSumSampler<'a, L: PotentialLaw + ?Sized> {
    law: &'a L,
    t: f64,
    n_sites: u64,
    pub mode: BlockMode,
}

impl<'a, L: PotentialLaw + ?Sized> BlockSumSampler<'a, L> {
    pub fn new(law: &'a L, t: f64, n_sites: u64) -> Result<Self> {
        Self::with_limits(law, t, n_sites, EXACT_LIMIT, TAIL_COUNT)
    }

    pub fn with_limits(law: &'a L, t: f64, n_sites: u64, exact_limit: u64, tail_count: f64) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::invalid("block needs at least one site"));
        }
        if n_sites <= exact_limit {
            return Ok(Self { law, t, n_sites, mode: BlockMode::Exact });
        }
        let s0 = (n_sites as f64 / tail_count).ln();
        let p_tail = (-s0).exp();
        let p_bulk = -(-s0).exp_m1();
        let g = |s: f64| law.potential_at_exp(s);
        let bps = law.breakpoints();
        // Raw moments E[X^k; s < s₀] in logs, then conditional central moments.
        let lm: Vec<f64> =
            (1..=3).map(|k| log_laplace_below(g, &bps, k as f64 * t, s0).map(|q| q.value)).collect::<Result<_>>()?;
        let lp = p_bulk.ln();
        let m1 = (lm[0] - lp).exp();
        let m2 = (lm[1] - lp).exp();
        let m3 = (lm[2] - lp).exp();
        let var = (m2 - m1 * m1).max(0.0);
        let mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
        let bulk_skew = if var > 0.0 { mu3 / var.powf(1.5) } else { 0.0 };
        Ok(Self {
            law,
            t,
            n_sites,
            mode: BlockMode::Hybrid { s0, p_tail, bulk_mean: m1, bulk_sd: var.sqrt(), bulk_skew },
        })
    }

    pub fn n_sites(&self) -> u64 {
        self.n_sites
    }

    fn site_value(&self, s: f64) -> f64 {
        scaled(self.law.potential_at_exp(s), self.t).exp()
    }

    /// Skewness of the normal-approximated bulk sum, `skew/√(N_bulk)`; zero
    /// in exact mode.
    pub fn bulk_sum_skewness(&self) -> f64 {
        match self.mode {
            BlockMode::Exact => 0.0,
            BlockMode::Hybrid { p_tail, bulk_skew, .. } => bulk_skew / (self.n_sites as f64 * (1.0 - p_tail)).sqrt(),
        }
    }

    /// Draw `m^L = N^{-1} Σ e^{t v_i}`.
    pub fn sample_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.n_sites as f64;
        match self.mode {
            BlockMode::Exact => {
                let mut sum = 0.0;
                for _ in 0..self.n_sites {
                    let s: f64 = Exp1.sample(rng);
                    sum += self.site_value(s);
                }
                sum / n
            }
            BlockMode::Hybrid { s0, p_tail, bulk_mean, bulk_sd, .. } => {
                let k = Binomial::new(self.n_sites, p_tail).expect("valid binomial").sample(rng);
                let mut tail = 0.0;
                for _ in 0..k {
                    let e: f64 = Exp1.sample(rng);
                    tail += self.site_value(s0 + e);
                }
                let nb = (self.n_sites - k) as f64;
                let z: f64 = StandardNormal.sample(rng);
                let bulk = nb * bulk_mean + nb.sqrt() * bulk_sd * z;
                (bulk + tail) / n
            }
        }
    }
}
