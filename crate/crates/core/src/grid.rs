//! Tensor-product quadrature grids in one or two dimensions.

use serde::{Deserialize, Serialize};

/// Uniform node grid on a box. Nodes include both endpoints; quadrature uses
/// the node value times the cell volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>) -> Self {
        assert!(!lo.is_empty() && lo.len() == hi.len() && lo.len() == points.len());
        assert!(points.iter().all(|&p| p >= 2), "grid needs at least two nodes per axis");
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "empty grid range");
        Self { lo, hi, points }
    }

    /// Same range and resolution along every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, points: usize) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim], vec![points; dim])
    }

    /// `[-10, 10]` with 2001 nodes in 1D, 401² nodes in 2D.
    pub fn default_for_dim(dim: usize) -> Self {
        match dim {
            1 => Self::cube(1, -10.0, 10.0, 2001),
            _ => Self::cube(dim, -10.0, 10.0, 401),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.points[axis] - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.points[axis]).map(|i| self.lo[axis] + i as f64 * h).collect()
    }

    /// Coordinates of the node with flat (row-major, last axis fastest) index.
    pub fn point(&self, mut index: usize, out: &mut [f64]) {
        for k in (0..self.dim()).rev() {
            let i = index % self.points[k];
            index /= self.points[k];
            out[k] = self.lo[k] + i as f64 * self.spacing(k);
        }
    }

    /// Calls `f(flat_index, point)` for every node.
    pub fn for_each_point(&self, mut f: impl FnMut(usize, &[f64])) {
        let mut x = vec![0.0; self.dim()];
        for idx in 0..self.len() {
            self.point(idx, &mut x);
            f(idx, &x);
        }
    }

    /// Same grid shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Self {
        Self {
            lo: self.lo.iter().zip(v).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(v).map(|(a, b)| a + b).collect(),
            points: self.points.clone(),
        }
    }
}
