//! Sample trajectories on a time grid.

use crate::kernels::TimeGrid;
use crate::{Error, Result};

/// `M` trajectories of a scalar process on the `N + 1` grid nodes, stored
/// row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    grid: TimeGrid,
    paths: usize,
    values: Vec<f64>,
}

impl PathSet {
    pub fn zeros(grid: TimeGrid, paths: usize) -> Self {
        Self {
            grid,
            paths,
            values: vec![0.0; paths * grid.nodes_len()],
        }
    }

    pub fn constant(grid: TimeGrid, paths: usize, value: f64) -> Self {
        Self {
            grid,
            paths,
            values: vec![value; paths * grid.nodes_len()],
        }
    }

    /// Builds from row-major values; rejects wrong lengths and non-finite entries.
    pub fn from_values(grid: TimeGrid, paths: usize, values: Vec<f64>) -> Result<Self> {
        if paths == 0 {
            return Err(Error::param("a path set needs at least one path"));
        }
        if values.len() != paths * grid.nodes_len() {
            return Err(Error::shape(format!(
                "expected {} x {} values, got {}",
                paths,
                grid.nodes_len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at path {}, node {}",
                k / grid.nodes_len(),
                k % grid.nodes_len()
            )));
        }
        Ok(Self {
            grid,
            paths,
            values,
        })
    }

    /// Evaluates `f(path, node)` on every entry.
    pub fn from_fn(grid: TimeGrid, paths: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = grid.nodes_len();
        let values = (0..paths * n).map(|k| f(k / n, k % n)).collect();
        Self {
            grid,
            paths,
            values,
        }
    }

    /// Same deterministic profile on every path.
    pub fn from_profile(grid: TimeGrid, paths: usize, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.nodes_len() {
            return Err(Error::shape(format!(
                "profile has {} nodes, grid has {}",
                profile.len(),
                grid.nodes_len()
            )));
        }
        Self::from_values(grid, paths, profile.repeat(paths))
    }

    pub(crate) fn from_raw(grid: TimeGrid, paths: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), paths * grid.nodes_len());
        Self {
            grid,
            paths,
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.paths
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.nodes_len()
    }

    #[inline]
    pub fn get(&self, path: usize, node: usize) -> f64 {
        self.values[path * self.grid.nodes_len() + node]
    }

    #[inline]
    pub fn set(&mut self, path: usize, node: usize, v: f64) {
        let n = self.grid.nodes_len();
        self.values[path * n + node] = v;
    }

    #[inline]
    pub fn path(&self, m: usize) -> &[f64] {
        let n = self.grid.nodes_len();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn path_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.grid.nodes_len();
        &mut self.values[m * n..(m + 1) * n]
    }

    /// Values of every path at one node.
    pub fn column(&self, node: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.get(m, node)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.paths != other.paths || self.grid != other.grid {
            return Err(Error::shape(format!(
                "path sets differ: {}x{} vs {}x{}",
                self.paths,
                self.num_nodes(),
                other.paths,
                other.num_nodes()
            )));
        }
        Ok(())
    }

    /// Entrywise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_raw(self.grid, self.paths, values))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.paths, self.values.iter().map(|v| f(*v)).collect())
    }

    /// Cross-path mean at each node.
    pub fn mean_profile(&self) -> Vec<f64> {
        let n = self.num_nodes();
        let mut out = vec![0.0; n];
        for m in 0..self.paths {
            for (o, v) in out.iter_mut().zip(self.path(m)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.paths as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// Cross-path sample standard deviation at each node (zero for one path).
    pub fn std_profile(&self) -> Vec<f64> {
        let mean = self.mean_profile();
        if self.paths < 2 {
            return vec![0.0; mean.len()];
        }
        let mut var = vec![0.0; mean.len()];
        for m in 0..self.paths {
            for ((s, v), mu) in var.iter_mut().zip(self.path(m)).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let d = (self.paths - 1) as f64;
        var.into_iter().map(|s| (s / d).sqrt()).collect()
    }

    /// Empirical `L^2` norm `sqrt((1/M) sum_m Delta sum_{i<N} x(m,i)^2)`.
    pub fn l2_norm(&self) -> f64 {
        let n = self.grid.steps();
        let delta = self.grid.delta();
        let total: f64 = (0..self.paths)
            .map(|m| self.path(m)[..n].iter().map(|v| v * v).sum::<f64>())
            .sum();
        (total * delta / self.paths as f64).sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 4).unwrap()
    }

    #[test]
    fn shapes_are_checked() {
        assert!(PathSet::from_values(grid(), 2, vec![0.0; 9]).is_err());
        assert!(PathSet::from_values(grid(), 2, vec![0.0; 10]).is_ok());
        let mut v = vec![0.0; 10];
        v[7] = f64::NAN;
        assert!(matches!(PathSet::from_values(grid(), 2, v), Err(Error::Domain(_))));
    }

    #[test]
    fn statistics() {
        let p = PathSet::from_fn(grid(), 2, |m, i| (m as f64) * 2.0 + i as f64);
        assert_eq!(p.mean_profile(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        for s in p.std_profile() {
            assert!((s - 2f64.sqrt()).abs() < 1e-15);
        }
        let one = PathSet::constant(grid(), 3, 1.0);
        assert!((one.l2_norm() - 1.0).abs() < 1e-15);
        assert_eq!(p.column(2), vec![2.0, 4.0]);
    }
}
