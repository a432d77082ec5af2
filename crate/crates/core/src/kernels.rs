//! Time grid, impact kernels and their Nyström quadrature matrices.
//!
//! Every matrix is `(N+1) x (N+1)` over the nodes `t_0..t_N`. Only cells
//! `[t_j, t_{j+1})` with `j < N` carry mass, so column `N` of the forward
//! matrix and row/column `N` of the adjoint matrix are identically zero. Row
//! `N` of the forward matrix gives the operator value at the horizon.

use serde::{Deserialize, Serialize};

use crate::linalg::Dense;
use crate::{Error, Result};

/// Uniform grid `t_i = i T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::param("step count must be positive"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`; there are `N + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes_len(&self) -> usize {
        self.steps + 1
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        // Exact at both ends; avoids accumulating i * delta drift.
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Remaining time `T - t_i`.
    #[inline]
    pub fn time_to_horizon(&self, i: usize) -> f64 {
        self.horizon * (self.steps - i) as f64 / self.steps as f64
    }
}

/// Impact kernel `kappa_inf + lambda * t^(nu - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kappa_inf: f64,
    pub lambda: f64,
    pub nu: f64,
}

impl KernelSpec {
    pub fn new(kappa_inf: f64, lambda: f64, nu: f64) -> Result<Self> {
        let kernel = Self {
            kappa_inf,
            lambda,
            nu,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_inf >= 0.0 && self.kappa_inf.is_finite()) {
            return Err(Error::param(format!("kappa_inf must be >= 0, got {}", self.kappa_inf)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::param(format!("nu must lie in (0, 1), got {}", self.nu)));
        }
        Ok(())
    }

    /// The power-law part alone (permanent level set to zero).
    pub fn transient(&self) -> Self {
        Self {
            kappa_inf: 0.0,
            ..*self
        }
    }

    /// The permanent part alone.
    pub fn permanent(&self) -> Self {
        Self {
            lambda: 0.0,
            ..*self
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        kernel_value(self, t)
    }

    /// `int_a^b K(t - s) ds` for `a < b <= t`.
    #[inline]
    fn forward_cell(&self, t: f64, a: f64, b: f64) -> f64 {
        let mut v = self.kappa_inf * (b - a);
        if self.lambda != 0.0 {
            v += self.lambda / self.nu * ((t - a).powf(self.nu) - (t - b).max(0.0).powf(self.nu));
        }
        v
    }

    /// `int_a^b K(s - t) ds` for `t <= a < b`.
    #[inline]
    fn adjoint_cell(&self, t: f64, a: f64, b: f64) -> f64 {
        let mut v = self.kappa_inf * (b - a);
        if self.lambda != 0.0 {
            v += self.lambda / self.nu * ((b - t).powf(self.nu) - (a - t).max(0.0).powf(self.nu));
        }
        v
    }
}

/// `kappa_inf + lambda * t^(nu - 1)` for `t > 0`.
pub fn kernel_value(kernel: &KernelSpec, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel undefined at t = {t}")));
    }
    Ok(kernel.kappa_inf + kernel.lambda * t.powf(kernel.nu - 1.0))
}

/// Running/terminal inventory penalty weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyKernelParams {
    pub phi: f64,
    pub varrho: f64,
}

impl PenaltyKernelParams {
    pub fn new(phi: f64, varrho: f64) -> Result<Self> {
        let p = Self { phi, varrho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::param(format!("phi must be >= 0, got {}", self.phi)));
        }
        if !(self.varrho >= 0.0 && self.varrho.is_finite()) {
            return Err(Error::param(format!("varrho must be >= 0, got {}", self.varrho)));
        }
        Ok(())
    }

    /// Weight `phi (T - t_i) + varrho` of the penalty kernel at node `i`.
    pub fn weight(&self, grid: &TimeGrid, i: usize) -> f64 {
        self.phi * grid.time_to_horizon(i) + self.varrho
    }
}

/// Forward (`L`) and adjoint (`M`) quadrature matrices of a Volterra kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromMatrices {
    grid: TimeGrid,
    forward: Dense,
    adjoint: Dense,
}

impl NystromMatrices {
    pub fn from_parts(grid: TimeGrid, forward: Dense, adjoint: Dense) -> Result<Self> {
        let n = grid.nodes_len();
        if forward.dim() != n || adjoint.dim() != n {
            return Err(Error::shape(format!(
                "matrices must be {n}x{n}, got {} and {}",
                forward.dim(),
                adjoint.dim()
            )));
        }
        Ok(Self {
            grid,
            forward,
            adjoint,
        })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        let n = grid.nodes_len();
        Self {
            grid,
            forward: Dense::zeros(n),
            adjoint: Dense::zeros(n),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Strictly lower-triangular forward matrix `L`.
    pub fn forward(&self) -> &Dense {
        &self.forward
    }

    /// Upper-triangular (diagonal included) adjoint matrix `M`.
    pub fn adjoint(&self) -> &Dense {
        &self.adjoint
    }

    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.forward.get(i, j)
    }

    pub fn m(&self, i: usize, j: usize) -> f64 {
        self.adjoint.get(i, j)
    }

    /// Entrywise sum, e.g. `L_{G+H} = L_G + L_H`.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::shape("matrices built on different grids"));
        }
        Ok(Self {
            grid: self.grid,
            forward: self.forward.add(&other.forward),
            adjoint: self.adjoint.add(&other.adjoint),
        })
    }

    /// Same forward matrix, adjoint replaced by the exact transpose `L^T`.
    ///
    /// `L^T` is the adjoint of `L` for the left-rectangle inner product, so
    /// operators assembled from this pair are exact discrete gradients of
    /// quadratic forms written with `L`.
    pub fn with_transposed_adjoint(&self) -> Self {
        let n = self.grid.nodes_len();
        let lt = Dense::from_fn(n, |i, j| if i < n - 1 && j < n - 1 { self.forward.get(j, i) } else { 0.0 });
        Self {
            grid: self.grid,
            forward: self.forward.clone(),
            adjoint: lt,
        }
    }

    /// Symmetrized discrete quadratic form `S + S^T` over the `N` cells, with
    /// `S = L + diag(M)` the forward matrix including the self-interaction of
    /// each cell.
    pub fn symmetrized_form(&self) -> Dense {
        let n = self.grid.steps();
        Dense::from_fn(n, |i, j| {
            let mut v = self.forward.get(i, j) + self.forward.get(j, i);
            if i == j {
                v += 2.0 * self.adjoint.get(i, i);
            }
            v
        })
    }
}

/// Builds `L` and `M` for `kernel` from exact cell antiderivatives.
pub fn build_nystrom(kernel: &KernelSpec, grid: &TimeGrid) -> Result<NystromMatrices> {
    kernel.validate()?;
    let n = grid.nodes_len();
    let steps = grid.steps();
    let mut forward = Dense::zeros(n);
    let mut adjoint = Dense::zeros(n);
    for i in 0..n {
        let t = grid.node(i);
        for j in 0..i.min(steps) {
            forward.set(i, j, kernel.forward_cell(t, grid.node(j), grid.node(j + 1)));
        }
        for j in i..steps {
            adjoint.set(i, j, kernel.adjoint_cell(t, grid.node(j), grid.node(j + 1)));
        }
    }
    NystromMatrices::from_parts(*grid, forward, adjoint)
}

/// Matrices of the penalty kernel `(phi (T - t) + varrho) 1_{t > s}`.
pub fn build_penalty_matrices(params: &PenaltyKernelParams, grid: &TimeGrid) -> Result<NystromMatrices> {
    params.validate()?;
    let n = grid.nodes_len();
    let steps = grid.steps();
    let delta = grid.delta();
    let mut forward = Dense::zeros(n);
    let mut adjoint = Dense::zeros(n);
    for i in 0..n {
        let wi = params.weight(grid, i) * delta;
        for j in 0..i.min(steps) {
            forward.set(i, j, wi);
        }
        for j in i..steps {
            adjoint.set(i, j, params.weight(grid, j) * delta);
        }
    }
    NystromMatrices::from_parts(*grid, forward, adjoint)
}

/// Admissibility constant `sup_{t <= T} int_0^t K(s)^2 ds`, in closed form.
pub fn kernel_l2_constant(kernel: &KernelSpec, horizon: f64) -> Result<f64> {
    kernel.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::param(format!("horizon must be positive, got {horizon}")));
    }
    let KernelSpec {
        kappa_inf: k,
        lambda: l,
        nu,
    } = *kernel;
    if l == 0.0 {
        return Ok(k * k * horizon);
    }
    if nu <= 0.5 {
        return Err(Error::Admissibility(format!(
            "int s^(2 nu - 2) diverges at 0 for nu = {nu} <= 1/2"
        )));
    }
    // The integrand is nonnegative, so the supremum is attained at t = T.
    Ok(k * k * horizon
        + 2.0 * k * l * horizon.powf(nu) / nu
        + l * l * horizon.powf(2.0 * nu - 1.0) / (2.0 * nu - 1.0))
}

/// Discrete complete-monotonicity check on the grid nodes `t_1..t_N`:
/// nonnegative, nonincreasing and convex sampled values.
pub fn is_discretely_completely_monotone(kernel: &KernelSpec, grid: &TimeGrid) -> Result<bool> {
    let vals = (1..=grid.steps())
        .map(|i| kernel_value(kernel, grid.node(i)))
        .collect::<Result<Vec<_>>>()?;
    let tol = 1e-12 * vals.first().copied().unwrap_or(1.0).abs().max(1.0);
    let nonneg = vals.iter().all(|v| *v >= 0.0);
    let monotone = vals.windows(2).all(|w| w[0] + tol >= w[1]);
    let convex = vals.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -tol);
    Ok(nonneg && monotone && convex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.delta(), 0.25);
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn kernel_value_examples() {
        let k = KernelSpec::new(1.0, 1.0, 0.5).unwrap();
        assert_eq!(kernel_value(&k, 1.0).unwrap(), 2.0);
        let reference = KernelSpec::new(0.0, 0.467, 0.614).unwrap();
        assert_relative_eq!(kernel_value(&reference, 1.0).unwrap(), 0.467);
        let sq = KernelSpec::new(0.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(kernel_value(&sq, 0.25).unwrap(), 2.0, epsilon = 1e-15);
        assert!(matches!(kernel_value(&k, 0.0), Err(Error::Domain(_))));
        assert!(kernel_value(&k, -1.0).is_err());
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::new(-1.0, 1.0, 0.5).is_err());
        assert!(KernelSpec::new(0.0, 1.0, 1.0).is_err());
        assert!(KernelSpec::new(0.0, 1.0, 0.0).is_err());
        assert!(KernelSpec::new(0.0, -0.1, 0.5).is_err());
    }

    #[test]
    fn constant_kernel_cells() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let m = build_nystrom(&KernelSpec::new(1.0, 0.0, 0.5).unwrap(), &g).unwrap();
        for i in 0..=100 {
            for j in 0..i {
                assert_relative_eq!(m.l(i, j), 0.01, epsilon = 1e-15);
            }
            // Row sums equal kappa_inf * t_i.
            let s: f64 = m.forward().row(i).iter().sum();
            assert_relative_eq!(s, g.node(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn power_law_cells() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let m = build_nystrom(&KernelSpec::new(0.0, 1.0, 0.5).unwrap(), &g).unwrap();
        assert_relative_eq!(m.l(2, 0), 2.0 * (0.02f64.sqrt() - 0.1), epsilon = 1e-14);
        assert_relative_eq!(m.l(2, 0), 0.0828427, epsilon = 1e-7);
        for i in 0..100 {
            assert_relative_eq!(m.m(i, i), 0.2, epsilon = 1e-13);
        }
        assert_eq!(m.m(100, 100), 0.0);
        assert_eq!(m.l(3, 3), 0.0);
    }

    #[test]
    fn penalty_matrices() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let p = build_penalty_matrices(&PenaltyKernelParams::new(0.0, 500.0).unwrap(), &g).unwrap();
        assert_relative_eq!(p.l(10, 3), 5.0, epsilon = 1e-12);
        assert_relative_eq!(p.m(3, 10), 5.0, epsilon = 1e-12);
        let z = build_penalty_matrices(&PenaltyKernelParams::new(0.0, 0.0).unwrap(), &g).unwrap();
        assert_eq!(z.forward().max_abs(), 0.0);
        assert_eq!(z.adjoint().max_abs(), 0.0);
        let phi = build_penalty_matrices(&PenaltyKernelParams::new(1.0, 0.0).unwrap(), &g).unwrap();
        for j in 0..50 {
            assert_relative_eq!(phi.l(50, j), 0.005, epsilon = 1e-15);
        }
        // Adjoint weight is evaluated at the column time.
        assert_relative_eq!(phi.m(10, 50), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn l2_constant() {
        let k = KernelSpec::new(0.0, 1.0, 0.75).unwrap();
        assert_relative_eq!(kernel_l2_constant(&k, 1.0).unwrap(), 2.0, epsilon = 1e-14);
        let c = KernelSpec::new(1.0, 0.0, 0.5).unwrap();
        assert_relative_eq!(kernel_l2_constant(&c, 2.0).unwrap(), 2.0);
        let bad = KernelSpec::new(0.0, 1.0, 0.5).unwrap();
        assert!(matches!(kernel_l2_constant(&bad, 1.0), Err(Error::Admissibility(_))));
    }

    #[test]
    fn discrete_complete_monotonicity() {
        let g = TimeGrid::new(2.0, 200).unwrap();
        for nu in [0.3, 0.5, 0.614, 0.9] {
            let k = KernelSpec::new(0.7, 0.5, nu).unwrap();
            assert!(is_discretely_completely_monotone(&k, &g).unwrap());
        }
    }

    #[test]
    fn transposed_adjoint_is_transpose() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let m = build_nystrom(&KernelSpec::new(0.5, 1.0, 0.6).unwrap(), &g).unwrap();
        let t = m.with_transposed_adjoint();
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(t.m(i, j), m.l(j, i));
            }
        }
        assert_eq!(t.m(10, 3), 0.0);
    }
}
