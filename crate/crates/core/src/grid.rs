//! Velocity- and position-space grids.
//!
//! Velocity space is a truncated uniform tensor grid, symmetric under
//! `v -> -v` (odd node count per axis so the origin is a node). Position
//! space is a periodic box `[-l_x, l_x)` resolved by an FFT-friendly grid.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Truncated tensor grid in velocity space.
///
/// Quadrature weights follow the trapezoid rule under the homogeneous
/// Dirichlet ghost-node closure: the integrand extends by zero at the ghost
/// nodes `+-(v_max + h)`, so every real node (including `+-v_max`) carries
/// weight `h` per axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub v_max: f64,
    pub n_per_axis: usize,
    pub dim: usize,
    pub spacing: f64,
    /// 1-D node coordinates shared by all axes.
    pub axis: Vec<f64>,
    /// Node coordinates, shape (n_total, dim), row-major over the tensor
    /// product with the last axis fastest.
    pub nodes: Array2<f64>,
    /// Quadrature weight per node.
    pub quadrature_weights: Array1<f64>,
}

impl VelocityGrid {
    pub fn n_total(&self) -> usize {
        self.nodes.nrows()
    }

    /// Coordinate `v_a` of every node for axis `a`.
    pub fn coord(&self, a: usize) -> Array1<f64> {
        self.nodes.column(a).to_owned()
    }

    /// |v| at every node.
    pub fn abs_v(&self) -> Array1<f64> {
        self.nodes
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// <v>^s = (1 + |v|^2)^(s/2) at every node.
    pub fn angle_pow(&self, s: f64) -> Array1<f64> {
        self.nodes
            .rows()
            .into_iter()
            .map(|r| (1.0 + r.iter().map(|x| x * x).sum::<f64>()).powf(s / 2.0))
            .collect()
    }

    /// v . omega at every node for a direction vector `omega`.
    pub fn dot(&self, omega: &[f64]) -> Array1<f64> {
        assert_eq!(omega.len(), self.dim);
        self.nodes
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(omega).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Multi-index of a flat node index (last axis fastest).
    pub fn unflatten(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = i % self.n_per_axis;
            i /= self.n_per_axis;
        }
        idx
    }

    /// Flat index of a multi-index.
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.n_per_axis + k)
    }

    /// Flat index of the node reflected through the origin.
    pub fn reflect(&self, i: usize) -> usize {
        let idx = self.unflatten(i);
        let r: Vec<usize> = idx.iter().map(|&k| self.n_per_axis - 1 - k).collect();
        self.flatten(&r)
    }
}

/// Uniform symmetric tensor grid with trapezoid quadrature weights.
///
/// Rejects even node counts (the origin must be a node) and fewer than
/// three nodes per axis.
pub fn build_grid(v_max: f64, n_per_axis: usize, dim: usize) -> Result<VelocityGrid> {
    if n_per_axis % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "even node count {n_per_axis}: v = 0 must be a grid node"
        )));
    }
    if n_per_axis < 3 {
        return Err(Error::InvalidConfig(format!(
            "n_per_axis = {n_per_axis} < 3"
        )));
    }
    if !(v_max > 0.0) {
        return Err(Error::InvalidConfig(format!("v_max = {v_max} must be > 0")));
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidConfig(format!("dim = {dim} not in {{1,2,3}}")));
    }
    let spacing = 2.0 * v_max / (n_per_axis as f64 - 1.0);
    // mirror construction: nodes are exactly symmetric under v -> -v
    let mut axis = vec![0.0; n_per_axis];
    for i in 0..n_per_axis / 2 {
        let x = -v_max + spacing * i as f64;
        axis[i] = x;
        axis[n_per_axis - 1 - i] = -x;
    }
    let n_total = n_per_axis.pow(dim as u32);
    let mut nodes = Array2::zeros((n_total, dim));
    for i in 0..n_total {
        let mut rem = i;
        for a in (0..dim).rev() {
            nodes[[i, a]] = axis[rem % n_per_axis];
            rem /= n_per_axis;
        }
    }
    let w = spacing.powi(dim as i32);
    let quadrature_weights = Array1::from_elem(n_total, w);
    Ok(VelocityGrid {
        v_max,
        n_per_axis,
        dim,
        spacing,
        axis,
        nodes,
        quadrature_weights,
    })
}

/// Periodic position grid with its Fourier wavenumbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceGrid {
    /// Half-period: the box is [-l_x, l_x).
    pub l_x: f64,
    pub n_x: usize,
    pub dim_x: usize,
    /// Wavenumbers eta_k = pi k / l_x in FFT order
    /// (k = 0, 1, ..., n/2-1, -n/2, ..., -1).
    pub wavenumbers: Vec<f64>,
}

impl SpaceGrid {
    pub fn new(l_x: f64, n_x: usize) -> Result<Self> {
        if !n_x.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "n_x = {n_x} is not a power of two"
            )));
        }
        if !(l_x > 0.0) {
            return Err(Error::InvalidConfig(format!("l_x = {l_x} must be > 0")));
        }
        let base = std::f64::consts::PI / l_x;
        let wavenumbers = (0..n_x)
            .map(|k| {
                let kk = if k < n_x / 2 {
                    k as isize
                } else {
                    k as isize - n_x as isize
                };
                base * kk as f64
            })
            .collect();
        Ok(SpaceGrid {
            l_x,
            n_x,
            dim_x: 1,
            wavenumbers,
        })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l_x / self.n_x as f64
    }

    /// Node x_j = -l_x + j dx.
    pub fn x(&self, j: usize) -> f64 {
        -self.l_x + self.dx() * j as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x(j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_161_1d() {
        let g = build_grid(8.0, 161, 1).unwrap();
        assert_eq!(g.n_total(), 161);
        assert!((g.spacing - 0.1).abs() < 1e-14);
        assert!((g.axis[0] + 8.0).abs() < 1e-14);
        assert!((g.axis[160] - 8.0).abs() < 1e-14);
        assert_eq!(g.axis[80], 0.0);
    }

    #[test]
    fn grid_even_count_rejected() {
        assert!(build_grid(8.0, 160, 1).is_err());
        assert!(build_grid(8.0, 1, 1).is_err());
    }

    #[test]
    fn grid_61_2d() {
        let g = build_grid(6.0, 61, 2).unwrap();
        assert_eq!(g.n_total(), 3721);
        assert!((g.spacing - 0.2).abs() < 1e-14);
    }

    #[test]
    fn grid_symmetric_under_reflection() {
        let g = build_grid(5.0, 11, 2).unwrap();
        for i in 0..g.n_total() {
            let r = g.reflect(i);
            for a in 0..g.dim {
                assert!((g.nodes[[i, a]] + g.nodes[[r, a]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn space_grid_wavenumbers() {
        let s = SpaceGrid::new(4.0, 8).unwrap();
        let b = std::f64::consts::PI / 4.0;
        let expect = [0.0, b, 2.0 * b, 3.0 * b, -4.0 * b, -3.0 * b, -2.0 * b, -b];
        for (w, e) in s.wavenumbers.iter().zip(expect.iter()) {
            assert!((w - e).abs() < 1e-12);
        }
        assert!(SpaceGrid::new(4.0, 12).is_err());
    }
}
