//! Boxes `Λ(x, r)` in the sup-norm on `Z^d` and their site indexing.

/// Axis-aligned box `Λ(center, radius)` with lexicographic site indexing
/// (first coordinate fastest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cube {
    pub center: Vec<i64>,
    pub radius: usize,
}

impl Cube {
    pub fn new(center: Vec<i64>, radius: usize) -> Self {
        Self { center, radius }
    }

    pub fn centered(dim: usize, radius: usize) -> Self {
        Self { center: vec![0; dim], radius }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.center).all(|(a, c)| (a - c).unsigned_abs() as usize <= self.radius)
    }

    /// Does `self` lie entirely inside `outer`?
    pub fn inside(&self, outer: &Cube) -> bool {
        self.center
            .iter()
            .zip(&outer.center)
            .all(|(c, o)| (c - o).unsigned_abs() as usize + self.radius <= outer.radius)
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let side = self.side() as i64;
        let mut idx = 0i64;
        for k in (0..self.dim()).rev() {
            idx = idx * side + (x[k] - self.center[k] + self.radius as i64);
        }
        Some(idx as usize)
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<i64> {
        let side = self.side();
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            x.push((idx % side) as i64 - self.radius as i64 + self.center[k]);
            idx /= side;
        }
        x
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |i| self.coords_of(i))
    }
}

/// Sup-norm of a lattice vector.
pub fn sup_norm(x: &[i64]) -> u64 {
    x.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let c = Cube::new(vec![2, -1], 3);
        assert_eq!(c.len(), 49);
        for i in 0..c.len() {
            let x = c.coords_of(i);
            assert_eq!(c.index_of(&x), Some(i));
        }
        assert_eq!(c.index_of(&[6, 0]), None);
    }

    #[test]
    fn nested_boxes() {
        let outer = Cube::centered(2, 5);
        assert!(Cube::new(vec![2, 2], 3).inside(&outer));
        assert!(!Cube::new(vec![3, 0], 3).inside(&outer));
    }
}
