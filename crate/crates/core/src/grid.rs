//! Periodic lattice bookkeeping.
//!
//! Axes beyond `dim` are padded with a single point so that every field is
//! stored as a row-major `n[0] x n[1] x n[2]` block with the last axis
//! contiguous.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EkError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    len: [f64; 3],
    #[serde(skip)]
    wavenumbers: [Vec<f64>; 3],
}

impl Grid {
    /// Builds a grid from per-axis point counts and periods. Every count must
    /// be a power of two no smaller than 8.
    pub fn new(points: &[usize], box_length: &[f64]) -> Result<Arc<Grid>> {
        let dim = points.len();
        if !(1..=3).contains(&dim) {
            return Err(EkError::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if box_length.len() != dim {
            return Err(EkError::InvalidGrid(format!(
                "{} box lengths given for a {dim}-dimensional grid",
                box_length.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut len = [1.0f64; 3];
        for a in 0..dim {
            if points[a] < 8 || !points[a].is_power_of_two() {
                return Err(EkError::InvalidGrid(format!(
                    "axis {a}: {} points is not a power of two >= 8",
                    points[a]
                )));
            }
            if !(box_length[a] > 0.0 && box_length[a].is_finite()) {
                return Err(EkError::InvalidGrid(format!(
                    "axis {a}: box length {} must be positive",
                    box_length[a]
                )));
            }
            n[a] = points[a];
            len[a] = box_length[a];
        }
        let mut grid = Grid { dim, n, len, wavenumbers: Default::default() };
        grid.fill_wavenumbers();
        Ok(Arc::new(grid))
    }

    /// Cubic grid with `n` points and period `l` on each of `dim` axes.
    pub fn cube(dim: usize, n: usize, l: f64) -> Result<Arc<Grid>> {
        Grid::new(&vec![n; dim], &vec![l; dim])
    }

    fn fill_wavenumbers(&mut self) {
        for a in 0..3 {
            let n = self.n[a];
            self.wavenumbers[a] = if a < self.dim {
                let base = 2.0 * PI / self.len[a];
                (0..n).map(|j| signed_index(j, n) as f64 * base).collect()
            } else {
                vec![0.0]
            };
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Padded shape; unused axes have one point.
    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn box_length(&self) -> &[f64] {
        &self.len[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.len[axis] / self.n[axis] as f64
    }

    pub fn volume(&self) -> f64 {
        self.len[..self.dim].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Wavenumbers along `axis` in FFT storage order, i.e. `2 pi k / L` with
    /// `k` running over `0, 1, .., n/2 - 1, -n/2, .., -1`.
    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.wavenumbers[axis]
    }

    /// Lattice index `k` in `[-n/2, n/2)` for storage position `j`.
    pub fn signed_index(&self, axis: usize, j: usize) -> i64 {
        if axis < self.dim {
            signed_index(j, self.n[axis])
        } else {
            0
        }
    }

    pub fn is_nyquist(&self, axis: usize, j: usize) -> bool {
        axis < self.dim && j == self.n[axis] / 2
    }

    /// Decomposes a flat index into per-axis indices.
    #[inline]
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let i2 = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], i2]
    }

    #[inline]
    pub fn flatten(&self, i: [usize; 3]) -> usize {
        (i[0] * self.n[1] + i[1]) * self.n[2] + i[2]
    }

    /// Wavevector of the mode stored at flat index `idx`.
    #[inline]
    pub fn xi(&self, idx: usize) -> [f64; 3] {
        let i = self.unflatten(idx);
        [self.wavenumbers[0][i[0]], self.wavenumbers[1][i[1]], self.wavenumbers[2][i[2]]]
    }

    /// `|xi|^2` for every mode in storage order.
    pub fn xi_squared(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &k0 in &self.wavenumbers[0] {
            for &k1 in &self.wavenumbers[1] {
                for &k2 in &self.wavenumbers[2] {
                    out.push(k0 * k0 + k1 * k1 + k2 * k2);
                }
            }
        }
        out
    }

    /// Physical coordinate of node `j` on `axis`, measured from the box corner.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        if axis < self.dim {
            j as f64 * self.spacing(axis)
        } else {
            0.0
        }
    }

    /// Physical coordinate measured from the box center, in `[-L/2, L/2)`.
    pub fn centered_coordinate(&self, axis: usize, j: usize) -> f64 {
        if axis < self.dim {
            j as f64 * self.spacing(axis) - 0.5 * self.len[axis]
        } else {
            0.0
        }
    }

    /// Centered position of the node at flat index `idx`.
    #[inline]
    pub fn centered_position(&self, idx: usize) -> [f64; 3] {
        let i = self.unflatten(idx);
        [
            self.centered_coordinate(0, i[0]),
            self.centered_coordinate(1, i[1]),
            self.centered_coordinate(2, i[2]),
        ]
    }

    /// Largest `|xi|` on the lattice (the corner of the Brillouin zone).
    pub fn max_wavenumber(&self) -> f64 {
        (0..self.dim)
            .map(|a| {
                let k = PI * self.n[a] as f64 / self.len[a];
                k * k
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest nonzero `|xi|` on the lattice.
    pub fn min_wavenumber(&self) -> f64 {
        (0..self.dim)
            .map(|a| 2.0 * PI / self.len[a])
            .fold(f64::INFINITY, f64::min)
    }

    /// Two-thirds rule: keep modes with `3|k| < n` on every axis.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let keep: Vec<Vec<bool>> = (0..3)
            .map(|a| {
                (0..self.n[a])
                    .map(|j| a >= self.dim || 3 * self.signed_index(a, j).unsigned_abs() < self.n[a] as u64)
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(self.len());
        for &a in &keep[0] {
            for &b in &keep[1] {
                for &c in &keep[2] {
                    out.push(a && b && c);
                }
            }
        }
        out
    }

    /// Largest `|xi|^2` among modes kept by the two-thirds rule.
    pub fn dealiased_max_xi_squared(&self) -> f64 {
        (0..self.dim)
            .map(|a| {
                let kmax = (self.n[a] as f64 / 3.0 - 1e-9).floor();
                let xi = 2.0 * PI * kmax / self.len[a];
                xi * xi
            })
            .sum()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.len == other.len
    }
}

#[inline]
fn signed_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}
