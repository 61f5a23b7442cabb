//! Regular lattice on the cube [-R, R]^d with Dirichlet walls.
//!
//! The grid carries `n` nodes per axis, spacing `dx = 2R/(n-1)`, and a
//! lexicographic flattening of the d-cube. Operators act on the *interior*
//! nodes (every coordinate strictly inside the walls); wall nodes carry the
//! Dirichlet zero and are eliminated from matrices. A periodic variant exists
//! for conservation tests: there every node is a state and faces wrap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Zero walls on the faces of the cube; operator matrices are indexed by
    /// interior nodes only.
    Dirichlet,
    /// Wrap-around faces; every node is a state. Used by conservation tests,
    /// not by shipped presets.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Spatial dimension, 1..=3.
    pub d: usize,
    /// Half-width of the cube.
    pub r: f64,
    /// Nodes per axis (including wall nodes under Dirichlet).
    pub n: usize,
    /// Boundary condition tag.
    pub bc: Boundary,
}

impl Grid {
    pub fn new(d: usize, r: f64, n: usize, bc: Boundary) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::Config(format!("grid dimension {d} outside 1..=3")));
        }
        if n < 2 {
            return Err(Error::Config(format!("grid needs n >= 2 nodes per axis, got {n}")));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Config(format!("grid half-width must be positive, got {r}")));
        }
        let g = Grid { d, r, n, bc };
        debug_assert!(g.dx() > 0.0);
        Ok(g)
    }

    pub fn dirichlet(d: usize, r: f64, n: usize) -> Result<Self> {
        Self::new(d, r, n, Boundary::Dirichlet)
    }

    /// Lattice spacing 2R/(n-1).
    pub fn dx(&self) -> f64 {
        2.0 * self.r / (self.n as f64 - 1.0)
    }

    /// Volume element dx^d.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    /// Total node count n^d (walls included).
    pub fn len_full(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Nodes per axis that carry degrees of freedom.
    pub fn states_per_axis(&self) -> usize {
        match self.bc {
            Boundary::Dirichlet => self.n - 2,
            Boundary::Periodic => self.n,
        }
    }

    /// Number of state nodes (interior nodes under Dirichlet).
    pub fn len(&self) -> usize {
        self.states_per_axis().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of a full-grid multi-index component.
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.r + self.dx() * i as f64
    }

    /// Decompose a state index into per-axis offsets (lexicographic, axis 0
    /// slowest). Offsets are in 0..states_per_axis().
    pub fn state_multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let m = self.states_per_axis();
        let mut out = [0usize; MAX_DIM];
        let mut rem = idx;
        for ax in (0..self.d).rev() {
            out[ax] = rem % m;
            rem /= m;
        }
        debug_assert_eq!(rem, 0, "state index out of range");
        out
    }

    /// Inverse of `state_multi_index`.
    pub fn state_index(&self, mi: &[usize]) -> usize {
        let m = self.states_per_axis();
        let mut idx = 0usize;
        for ax in 0..self.d {
            debug_assert!(mi[ax] < m);
            idx = idx * m + mi[ax];
        }
        idx
    }

    /// Continuum coordinates of a state node, padded with zeros beyond `d`.
    pub fn state_coord(&self, idx: usize) -> [f64; MAX_DIM] {
        let mi = self.state_multi_index(idx);
        let off = match self.bc {
            Boundary::Dirichlet => 1,
            Boundary::Periodic => 0,
        };
        let mut x = [0.0; MAX_DIM];
        for ax in 0..self.d {
            x[ax] = self.axis_coord(mi[ax] + off);
        }
        x
    }

    /// Euclidean norm |x| of a state node's coordinates.
    pub fn state_radius(&self, idx: usize) -> f64 {
        let x = self.state_coord(idx);
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Index of the state node nearest to a continuum point (for window
    /// selection in tests and reports).
    pub fn nearest_state(&self, x: &[f64]) -> usize {
        let m = self.states_per_axis();
        let off = match self.bc {
            Boundary::Dirichlet => 1,
            Boundary::Periodic => 0,
        };
        let mut mi = [0usize; MAX_DIM];
        for ax in 0..self.d {
            let raw = ((x[ax] + self.r) / self.dx()).round() as isize - off as isize;
            mi[ax] = raw.clamp(0, m as isize - 1) as usize;
        }
        self.state_index(&mi[..self.d])
    }

    /// Neighbor of a state node one step along `axis` in direction
    /// `step = ±1`. `None` means the step leaves the state set (hits a wall
    /// under Dirichlet); under periodic boundaries the step wraps.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let m = self.states_per_axis();
        let mut mi = self.state_multi_index(idx);
        let pos = mi[axis] as isize + step;
        match self.bc {
            Boundary::Dirichlet => {
                if pos < 0 || pos >= m as isize {
                    return None;
                }
                mi[axis] = pos as usize;
            }
            Boundary::Periodic => {
                mi[axis] = pos.rem_euclid(m as isize) as usize;
            }
        }
        Some(self.state_index(&mi[..self.d]))
    }

    /// All state-node coordinates, flattened row-major as `len() x d`.
    pub fn state_coords(&self) -> Vec<[f64; MAX_DIM]> {
        (0..self.len()).map(|i| self.state_coord(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_counts() {
        let g = Grid::dirichlet(1, 1.0, 3).unwrap();
        assert_eq!(g.dx(), 1.0);
        assert_eq!(g.len_full(), 3);
        assert_eq!(g.len(), 1);
        assert_eq!(g.state_coord(0)[0], 0.0);

        let g = Grid::dirichlet(3, 6.0, 8).unwrap();
        assert_eq!(g.len_full(), 512);
        assert_eq!(g.len(), 216);
    }

    #[test]
    fn all_nodes_inside_cube() {
        let g = Grid::dirichlet(2, 2.5, 9).unwrap();
        for i in 0..g.len() {
            let x = g.state_coord(i);
            for ax in 0..g.d {
                assert!(x[ax].abs() <= g.r + 1e-12);
            }
        }
    }

    #[test]
    fn index_roundtrip_is_bijective() {
        let g = Grid::dirichlet(3, 1.0, 6).unwrap();
        let mut seen = vec![false; g.len()];
        for i in 0..g.len() {
            let mi = g.state_multi_index(i);
            let back = g.state_index(&mi[..g.d]);
            assert_eq!(back, i);
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn neighbors_respect_walls_and_wrap() {
        let g = Grid::dirichlet(1, 2.0, 5).unwrap(); // interior offsets 0,1,2
        assert_eq!(g.neighbor(0, 0, -1), None);
        assert_eq!(g.neighbor(0, 0, 1), Some(1));
        assert_eq!(g.neighbor(2, 0, 1), None);

        let p = Grid::new(1, 2.0, 5, Boundary::Periodic).unwrap();
        assert_eq!(p.neighbor(0, 0, -1), Some(4));
        assert_eq!(p.neighbor(4, 0, 1), Some(0));
    }

    #[test]
    fn nearest_state_recovers_nodes() {
        let g = Grid::dirichlet(2, 3.0, 7).unwrap();
        for i in 0..g.len() {
            let x = g.state_coord(i);
            assert_eq!(g.nearest_state(&x[..2]), i);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Grid::dirichlet(0, 1.0, 4).is_err());
        assert!(Grid::dirichlet(4, 1.0, 4).is_err());
        assert!(Grid::dirichlet(2, -1.0, 4).is_err());
        assert!(Grid::dirichlet(2, 1.0, 1).is_err());
    }
}
