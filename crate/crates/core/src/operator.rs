//! The operator `κΔ + v` restricted to the active set `U_w = Λ(x₀,r) ∖ 𝒢(w)`
//! with Dirichlet zero outside.

use nalgebra::DMatrix;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::Cube;

/// Box `Λ(center, radius)` on which a truncated moment is computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxDomain {
    pub cube: Cube,
}

impl BoxDomain {
    pub fn new(center: Vec<i64>, radius: usize) -> Self {
        Self { cube: Cube::new(center, radius) }
    }

    pub fn centered(dim: usize, radius: usize) -> Self {
        Self { cube: Cube::centered(dim, radius) }
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }
}

/// Non-hard-core sites of a box together with their nearest-neighbour graph.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    pub domain: BoxDomain,
    /// Box index of each active site.
    pub box_index: Vec<usize>,
    /// Environment-window index of each active site.
    pub env_index: Vec<usize>,
    /// Active-site number for each box index.
    pub local_of_box: Vec<Option<usize>>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl ActiveSet {
    pub fn build(env: &Environment, domain: &BoxDomain) -> Result<Self> {
        let cube = &domain.cube;
        if cube.dim() != env.dim() {
            return Err(Error::invalid("box dimension differs from the environment"));
        }
        if !cube.inside(&env.window) {
            let needed = cube.center.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0) + cube.radius;
            return Err(Error::WindowTooSmall { needed, available: env.radius() });
        }
        let mut box_index = Vec::new();
        let mut env_index = Vec::new();
        let mut local_of_box = vec![None; cube.len()];
        for (bi, x) in cube.iter().enumerate() {
            let ei = env.index_of(&x).expect("box inside window");
            if !env.hard_core[ei] {
                local_of_box[bi] = Some(box_index.len());
                box_index.push(bi);
                env_index.push(ei);
            }
        }
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        for &bi in &box_index {
            let x = cube.coords_of(bi);
            for k in 0..cube.dim() {
                for step in [-1i64, 1] {
                    let mut y = x.clone();
                    y[k] += step;
                    if let Some(bj) = cube.index_of(&y) {
                        if let Some(j) = local_of_box[bj] {
                            neighbors.push(j);
                        }
                    }
                }
            }
            offsets.push(neighbors.len());
        }
        Ok(Self { domain: domain.clone(), box_index, env_index, local_of_box, offsets, neighbors })
    }

    pub fn len(&self) -> usize {
        self.box_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.box_index.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn coords(&self, i: usize) -> Vec<i64> {
        self.domain.cube.coords_of(self.box_index[i])
    }
}

/// Sparse symmetric matrix of `κΔ + v` on an active set.
#[derive(Debug, Clone)]
pub struct Operator {
    pub kappa: f64,
    pub active: ActiveSet,
    pub diag: Vec<f64>,
}

impl Operator {
    pub fn new(env: &Environment, active: ActiveSet, kappa: f64) -> Self {
        let two_d = 2.0 * env.dim() as f64;
        let diag = active.env_index.iter().map(|&ei| env.v(ei) - two_d * kappa).collect();
        Self { kappa, active, diag }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.diag.len() {
            let mut acc = self.diag[i] * x[i];
            for &j in self.active.neighbors(i) {
                acc += self.kappa * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.diag[i];
            for &j in self.active.neighbors(i) {
                a[(i, j)] = self.kappa;
            }
        }
        a
    }

    /// Gershgorin enclosure `[lo, hi]` of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let r = self.kappa * self.active.neighbors(i).len() as f64;
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    pub fn max_abs_potential(&self) -> f64 {
        let shift = 2.0 * self.active.domain.dim() as f64 * self.kappa;
        self.diag.iter().map(|d| (d + shift).abs()).fold(0.0, f64::max)
    }
}
