//! Ridge least-squares Monte Carlo estimates of conditional expectations.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::par;
use crate::signals::{FeatureSet, RAW_FEATURES};
use crate::volterra::ConditionalExpectation;
use crate::{Error, Result};

/// Fitted linear predictor `y ~ X beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub beta: Vec<f64>,
    /// `|(X^T X + eta I) beta - X^T y| / |X^T y|` at fit time.
    pub normal_residual: f64,
}

fn gram(x: &[f64], rows: usize, cols: usize, penalty: f64) -> DMatrix<f64> {
    let xm = DMatrix::from_row_slice(rows, cols, x);
    let mut g = xm.transpose() * &xm;
    for k in 0..cols {
        g[(k, k)] += penalty;
    }
    g
}

fn xt_y(x: &[f64], cols: usize, y: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(cols);
    for (row, yi) in x.chunks_exact(cols).zip(y) {
        for k in 0..cols {
            v[k] += row[k] * yi;
        }
    }
    v
}

fn relative_residual(g: &DMatrix<f64>, beta: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    let res = (g * beta - rhs).norm();
    let scale = rhs.norm();
    if scale == 0.0 {
        res
    } else {
        res / scale
    }
}

/// Ridge fit `beta = (X^T X + penalty I)^{-1} X^T y` for a row-major `M x B` design.
pub fn fit_cond_exp(x: &[f64], cols: usize, y: &[f64], penalty: f64) -> Result<Predictor> {
    if cols == 0 {
        return Err(Error::Regression("design has no columns".into()));
    }
    if !(penalty >= 0.0) {
        return Err(Error::param(format!("ridge penalty must be >= 0, got {penalty}")));
    }
    let rows = y.len();
    if x.len() != rows * cols {
        return Err(Error::shape(format!(
            "design has {} entries, expected {rows} x {cols}",
            x.len()
        )));
    }
    if rows < cols {
        return Err(Error::Regression(format!(
            "insufficient paths: {rows} samples for {cols} regressors"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite regression input".into()));
    }
    let g = gram(x, rows, cols, penalty);
    let rhs = xt_y(x, cols, y);
    let beta = g
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|b| b.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("normal equations are singular".into()))?;
    let normal_residual = relative_residual(&g, &beta, &rhs);
    Ok(Predictor {
        beta: beta.iter().copied().collect(),
        normal_residual,
    })
}

/// `X beta` for a row-major design with `beta.len()` columns.
pub fn predict_path_conditional(pred: &Predictor, x: &[f64]) -> Result<Vec<f64>> {
    let cols = pred.beta.len();
    if cols == 0 || x.len() % cols != 0 {
        return Err(Error::shape(format!(
            "design of {} entries does not match {cols} coefficients",
            x.len()
        )));
    }
    Ok(x.chunks_exact(cols)
        .map(|row| row.iter().zip(&pred.beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// Per-time regression settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    pub ridge_penalty: f64,
    /// Fits need at least this many paths (and never fewer than regressors).
    pub min_paths: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            ridge_penalty: 1e-5,
            min_paths: 2,
        }
    }
}

/// Centered, standardized design and its ridge factorization at one node.
struct NodeFit {
    /// `M x (B - 1)` centered non-constant basis columns.
    design: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    gram: DMatrix<f64>,
}

/// Conditional-expectation provider backed by one ridge regression per node.
///
/// Raw features are standardized per node; near-constant features become
/// zero columns. The intercept is left unpenalized by centering both basis
/// columns and targets, so a target that is constant across paths is
/// reproduced exactly.
pub struct LsmcProvider {
    fits: Vec<NodeFit>,
    paths: usize,
    cols: usize,
    max_residual: AtomicU64,
}

impl LsmcProvider {
    pub fn new(features: &FeatureSet, cfg: &RegressionConfig) -> Result<Self> {
        if !(cfg.ridge_penalty >= 0.0) {
            return Err(Error::param("ridge penalty must be >= 0"));
        }
        let paths = features.num_paths();
        let cols = features.basis_len() - 1;
        if paths < cfg.min_paths.max(features.basis_len()) {
            return Err(Error::Regression(format!(
                "insufficient paths: {paths} for {} regressors",
                features.basis_len()
            )));
        }
        let nodes = features.grid().nodes_len();
        let fits = par::map_indices(nodes, |i| Self::fit_node(features, i, cols, cfg.ridge_penalty));
        let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fits,
            paths,
            cols,
            max_residual: AtomicU64::new(0f64.to_bits()),
        })
    }

    fn fit_node(features: &FeatureSet, i: usize, cols: usize, penalty: f64) -> Result<NodeFit> {
        let paths = features.num_paths();
        let mut shift = [0.0; RAW_FEATURES];
        let mut scale = [0.0; RAW_FEATURES];
        for k in 0..RAW_FEATURES {
            let col: Vec<f64> = (0..paths).map(|m| features.raw(k).get(m, i)).collect();
            let mean = col.iter().sum::<f64>() / paths as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / paths as f64;
            let sd = var.sqrt();
            shift[k] = mean;
            scale[k] = if sd > 1e-12 * (1.0 + mean.abs()) { 1.0 / sd } else { 0.0 };
        }
        let full = features.design(i, |k, v| (v - shift[k]) * scale[k]);
        let b = cols + 1;
        let mut design = Vec::with_capacity(paths * cols);
        for row in full.chunks_exact(b) {
            design.extend_from_slice(&row[1..]);
        }
        let mut means = vec![0.0; cols];
        for row in design.chunks_exact(cols) {
            for (s, v) in means.iter_mut().zip(row) {
                *s += v;
            }
        }
        means.iter_mut().for_each(|s| *s /= paths as f64);
        for row in design.chunks_exact_mut(cols) {
            for (v, s) in row.iter_mut().zip(&means) {
                *v -= s;
            }
        }
        // A zero column with zero penalty leaves the Gram matrix singular; the
        // tiny floor keeps Cholesky defined and only affects those dead columns.
        let ridge = if penalty > 0.0 { penalty } else { f64::EPSILON };
        let gram = gram(&design, paths, cols, ridge);
        let chol = Cholesky::new(gram.clone())
            .ok_or_else(|| Error::Singular(format!("ridge Gram matrix at node {i} is not positive definite")))?;
        Ok(NodeFit { design, chol, gram })
    }

    pub fn num_regressors(&self) -> usize {
        self.cols + 1
    }

    /// Largest relative normal-equation residual over all projections so far.
    pub fn max_normal_residual(&self) -> f64 {
        f64::from_bits(self.max_residual.load(Ordering::Relaxed))
    }

    fn record(&self, r: f64) {
        // Nonnegative floats order like their bit patterns.
        self.max_residual.fetch_max(r.to_bits(), Ordering::Relaxed);
    }
}

impl ConditionalExpectation for LsmcProvider {
    fn project(&self, p: usize, target: &[f64]) -> Result<Vec<f64>> {
        let fit = self
            .fits
            .get(p)
            .ok_or_else(|| Error::Regression(format!("no regression fitted at node {p}")))?;
        if target.len() != self.paths {
            return Err(Error::shape(format!(
                "target has {} paths, regression has {}",
                target.len(),
                self.paths
            )));
        }
        let ybar = target.iter().sum::<f64>() / self.paths as f64;
        let centered: Vec<f64> = target.iter().map(|y| y - ybar).collect();
        let rhs = xt_y(&fit.design, self.cols, &centered);
        let beta = fit.chol.solve(&rhs);
        let residual = relative_residual(&fit.gram, &beta, &rhs);
        if !residual.is_finite() {
            return Err(Error::Regression(format!("non-finite projection at node {p}")));
        }
        self.record(residual);
        Ok(fit
            .design
            .chunks_exact(self.cols)
            .map(|row| ybar + row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}
