//! Parity and strip-box partitions of `Λ_L = [−L, L]^d` at mesoscopic scale
//! `L′` and fine scale `r`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Gap between two disjoint intervals (0 if they touch or overlap).
    fn gap(&self, other: &Interval) -> i64 {
        (other.lo - self.hi).max(self.lo - other.hi).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub l: usize,
    pub l_prime: usize,
    pub r: usize,
    pub dim: usize,
    /// `2L+1 = q L′ + q̄`.
    pub q: usize,
    pub q_bar: usize,
    /// `I_1, …, I_q`.
    pub intervals: Vec<Interval>,
    /// `J_i ⊂ I_i`, `|J_i| = L′ − 2r`.
    pub inner: Vec<Interval>,
}

pub fn build_partitions(l: usize, l_prime: usize, r: usize, dim: usize) -> Result<PartitionPlan> {
    if dim == 0 || l_prime == 0 || r > l_prime || l_prime > l {
        return Err(Error::invalid(format!(
            "scales must satisfy r ≤ L′ ≤ L and L′ ≥ 1, got r={r}, L′={l_prime}, L={l}"
        )));
    }
    if 2 * r > l_prime {
        return Err(Error::PartitionInfeasible(format!("main boxes need L′ ≥ 2r, got L′={l_prime}, r={r}")));
    }
    let n = 2 * l + 1;
    let q = n / l_prime;
    let q_bar = n % l_prime;
    if q_bar > q {
        return Err(Error::PartitionInfeasible(format!(
            "2L+1 = {n} = {q}·{l_prime} + {q_bar} leaves more remainder than intervals"
        )));
    }
    let mut intervals = Vec::with_capacity(q);
    let mut inner = Vec::with_capacity(q);
    let mut start = -(l as i64);
    for i in 0..q {
        let extra = usize::from(i < q_bar);
        let len = (l_prime + extra) as i64;
        let end = start + len - 1;
        intervals.push(Interval { lo: start, hi: end });
        inner.push(Interval { lo: start + r as i64, hi: end - (r + extra) as i64 });
        start = end + 1;
    }
    Ok(PartitionPlan { l, l_prime, r, dim, q, q_bar, intervals, inner })
}

impl PartitionPlan {
    /// Number of partition boxes, `q^d`.
    pub fn n_boxes(&self) -> usize {
        self.q.pow(self.dim as u32)
    }

    /// Multi-index (0-based) of box number `k`, first coordinate fastest.
    pub fn index(&self, mut k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(k % self.q);
            k /= self.q;
        }
        out
    }

    /// Parity class as a bitmask: bit `k` set iff the 1-based coordinate
    /// `i_k` is even.
    pub fn parity_class(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().fold(0, |acc, (k, &i)| if (i + 1) % 2 == 0 { acc | (1 << k) } else { acc })
    }

    /// Partition box `Λ′_i` containing `x`, as a box number.
    pub fn box_of(&self, x: &[i64]) -> Option<usize> {
        let mut k = 0;
        let mut stride = 1;
        for &c in x {
            let i = self.intervals.iter().position(|iv| iv.contains(c))?;
            k += i * stride;
            stride *= self.q;
        }
        Some(k)
    }

    pub fn in_main_box(&self, x: &[i64]) -> bool {
        x.iter().all(|&c| self.inner.iter().any(|iv| iv.contains(c)))
    }

    pub fn box_len(&self, idx: &[usize]) -> usize {
        idx.iter().map(|&i| self.intervals[i].len()).product()
    }

    pub fn main_box_len(&self, idx: &[usize]) -> usize {
        idx.iter().map(|&i| self.inner[i].len()).product()
    }

    /// `|S_L|`.
    pub fn strip_len(&self) -> usize {
        let total = (2 * self.l + 1).pow(self.dim as u32);
        let main: usize = self.inner.iter().map(|iv| iv.len()).sum::<usize>().pow(self.dim as u32);
        total - main
    }

    /// Sup-norm distance between two partition boxes.
    pub fn box_distance(&self, a: &[usize], b: &[usize]) -> i64 {
        a.iter().zip(b).map(|(&i, &j)| self.intervals[i].gap(&self.intervals[j])).max().unwrap_or(0)
    }

    pub fn check(&self) -> InvariantReport {
        let n = 2 * self.l + 1;
        // p1: the intervals tile [−L, L] in order, so their product tiles Λ_L.
        let mut next = -(self.l as i64);
        let mut p1 = true;
        for iv in &self.intervals {
            p1 &= iv.lo == next && !iv.is_empty();
            next = iv.hi + 1;
        }
        p1 &= next == self.l as i64 + 1 && self.intervals.iter().map(|iv| iv.len()).sum::<usize>() == n;
        let lo = self.l_prime.pow(self.dim as u32);
        let hi = (self.l_prime + 1).pow(self.dim as u32);
        let p2 = (0..self.n_boxes()).all(|k| {
            let s = self.box_len(&self.index(k));
            lo <= s && s <= hi
        });
        let mut p3 = true;
        let mut same_parity_pairs = 0usize;
        let mut min_same_parity_distance: Option<i64> = None;
        for a in 0..self.n_boxes() {
            let ia = self.index(a);
            for b in a + 1..self.n_boxes() {
                let ib = self.index(b);
                if self.parity_class(&ia) == self.parity_class(&ib) {
                    same_parity_pairs += 1;
                    let dist = self.box_distance(&ia, &ib);
                    min_same_parity_distance = Some(min_same_parity_distance.map_or(dist, |m| m.min(dist)));
                    p3 &= dist >= self.l_prime as i64;
                }
            }
        }
        let main_ok = self.inner.iter().zip(&self.intervals).all(|(j, i)| {
            j.len() == self.l_prime - 2 * self.r
                && (j.is_empty() || (j.lo - i.lo >= self.r as i64 && i.hi - j.hi >= self.r as i64))
        });
        let strip_fraction = self.strip_len() as f64 / (n as f64).powi(self.dim as i32);
        let lp = self.l_prime as f64;
        let d = self.dim as i32;
        let strip_bound = ((lp + 1.0).powi(d) - (lp - 2.0 * self.r as f64).powi(d)) / lp.powi(d);
        InvariantReport {
            p1,
            p2,
            p3,
            p4: strip_fraction <= strip_bound + 1e-12,
            main_boxes_ok: main_ok,
            same_parity_pairs,
            min_same_parity_distance,
            strip_fraction,
            strip_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub p1: bool,
    pub p2: bool,
    pub p3: bool,
    pub p4: bool,
    pub main_boxes_ok: bool,
    pub same_parity_pairs: usize,
    pub min_same_parity_distance: Option<i64>,
    pub strip_fraction: f64,
    pub strip_bound: f64,
}

impl InvariantReport {
    pub fn all(&self) -> bool {
        self.p1 && self.p2 && self.p3 && self.p4 && self.main_boxes_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_example() {
        let p = build_partitions(5, 3, 1, 1).unwrap();
        assert_eq!((p.q, p.q_bar), (3, 2));
        let lens: Vec<usize> = p.intervals.iter().map(|i| i.len()).collect();
        assert_eq!(lens, vec![4, 4, 3]);
        assert_eq!(p.intervals[0], Interval { lo: -5, hi: -2 });
        assert_eq!(p.inner[0], Interval { lo: -4, hi: -4 });
        assert_eq!(p.inner[2], Interval { lo: 4, hi: 4 });
        assert!(p.check().all());
    }

    #[test]
    fn coarsest_scale_has_no_same_parity_pairs() {
        // L′ = L splits 2L+1 = 2L + 1 into two boxes of opposite parity.
        for l in 2..20 {
            let p = build_partitions(l, l, 0, 1).unwrap();
            let rep = p.check();
            assert_eq!(p.q, 2);
            assert_eq!(rep.same_parity_pairs, 0);
            assert!(rep.all());
        }
    }

    #[test]
    fn infeasible_and_invalid_scales() {
        assert!(matches!(build_partitions(5, 4, 1, 1), Err(Error::PartitionInfeasible(_))));
        assert!(matches!(build_partitions(5, 3, 2, 1), Err(Error::PartitionInfeasible(_))));
        assert!(matches!(build_partitions(3, 5, 1, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn box_lookup_is_consistent() {
        let p = build_partitions(7, 4, 1, 2).unwrap();
        let mut counts = vec![0usize; p.n_boxes()];
        for x in -7..=7 {
            for y in -7..=7 {
                counts[p.box_of(&[x, y]).unwrap()] += 1;
            }
        }
        for (k, c) in counts.iter().enumerate() {
            assert_eq!(*c, p.box_len(&p.index(k)));
        }
    }
}
