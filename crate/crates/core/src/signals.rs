//! Ornstein-Uhlenbeck drift signal, its closed-form alpha and regression features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kernels::TimeGrid;
use crate::par;
use crate::paths::PathSet;
use crate::{Error, Result};

/// `d mu = (eta - kappa mu) dt + sigma dW`, `mu_0 = mu0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    pub eta: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub mu0: f64,
}

impl OUParams {
    pub fn new(eta: f64, kappa: f64, sigma: f64, mu0: f64) -> Result<Self> {
        let p = Self {
            eta,
            kappa,
            sigma,
            mu0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::param(format!("signal kappa must be positive, got {}", self.kappa)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !self.eta.is_finite() || !self.mu0.is_finite() {
            return Err(Error::param("eta and mu0 must be finite"));
        }
        Ok(())
    }

    /// Long-run level `eta / kappa`.
    pub fn mean_level(&self) -> f64 {
        self.eta / self.kappa
    }

    /// `E[mu_{t+h} | mu_t = x]`.
    pub fn conditional_mean(&self, x: f64, h: f64) -> f64 {
        let e = (-self.kappa * h).exp();
        x * e + self.mean_level() * (1.0 - e)
    }

    /// `alpha_t = (mu_t - eta/kappa)(1 - e^{-kappa tau})/kappa + (eta/kappa) tau`, `tau = T - t`.
    pub fn alpha(&self, mu: f64, tau: f64) -> f64 {
        let k = self.kappa;
        (mu - self.mean_level()) * -(-k * tau).exp_m1() / k + self.mean_level() * tau
    }
}

/// Samples `paths` trajectories with the exact OU transition.
///
/// Path `m` draws from its own ChaCha stream, so the output does not depend
/// on how paths are distributed across threads.
pub fn simulate_mu(params: &OUParams, grid: &TimeGrid, paths: usize, seed: u64) -> Result<PathSet> {
    params.validate()?;
    if paths == 0 {
        return Err(Error::param("path count must be at least 1"));
    }
    let n = grid.nodes_len();
    let dt = grid.delta();
    let decay = (-params.kappa * dt).exp();
    let drift = params.mean_level() * -(-params.kappa * dt).exp_m1();
    let vol = params.sigma * (-(-2.0 * params.kappa * dt).exp_m1() / (2.0 * params.kappa)).sqrt();
    let mut out = PathSet::zeros(*grid, paths);
    par::for_each_chunk_mut(out.values_mut(), n, |m, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        row[0] = params.mu0;
        for i in 1..n {
            let z: f64 = if vol > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            row[i] = row[i - 1] * decay + drift + vol * z;
        }
    });
    Ok(out)
}

/// Pointwise closed-form alpha signal.
pub fn alpha_closed_form(params: &OUParams, mu: &PathSet) -> Result<PathSet> {
    params.validate()?;
    let grid = *mu.grid();
    Ok(PathSet::from_fn(grid, mu.num_paths(), |m, i| {
        params.alpha(mu.get(m, i), grid.time_to_horizon(i))
    }))
}

/// Laguerre polynomials `l_0 = 1`, `l_1 = 1 - x`, `l_2 = 1 - 2x + x^2/2`.
pub fn laguerre(degree: usize, x: f64) -> f64 {
    match degree {
        0 => 1.0,
        1 => 1.0 - x,
        2 => 1.0 - 2.0 * x + 0.5 * x * x,
        _ => {
            // Three-term recurrence for completeness.
            let (mut a, mut b) = (1.0, 1.0 - x);
            for k in 1..degree {
                let kf = k as f64;
                let c = ((2.0 * kf + 1.0 - x) * b - kf * a) / (kf + 1.0);
                a = b;
                b = c;
            }
            b
        }
    }
}

/// Number of raw features per path and node.
pub const RAW_FEATURES: usize = 3;

/// Raw features `(alpha, int alpha, int e^{-kappa(t-s)} alpha)` per path and node.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    raw: [PathSet; RAW_FEATURES],
    degree: usize,
}

impl FeatureSet {
    pub fn raw(&self, k: usize) -> &PathSet {
        &self.raw[k]
    }

    pub fn num_paths(&self) -> usize {
        self.raw[0].num_paths()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.raw[0].grid()
    }

    /// Highest Laguerre degree applied per feature.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Regressor count: a constant plus degrees `1..=degree` of every raw feature.
    pub fn basis_len(&self) -> usize {
        1 + RAW_FEATURES * self.degree
    }

    /// Raw feature vector of path `m` at node `i`.
    pub fn raw_at(&self, m: usize, i: usize) -> [f64; RAW_FEATURES] {
        std::array::from_fn(|k| self.raw[k].get(m, i))
    }

    /// Basis row `(l_0, l_1(x_1), .., l_d(x_1), l_1(x_2), ..)` for transformed features `x`.
    pub fn basis_row(&self, x: &[f64; RAW_FEATURES], out: &mut Vec<f64>) {
        out.push(laguerre(0, 0.0));
        for xk in x {
            for d in 1..=self.degree {
                out.push(laguerre(d, *xk));
            }
        }
    }

    /// Design matrix (row-major, `M x basis_len`) at node `i` after `transform`.
    pub fn design(&self, i: usize, transform: impl Fn(usize, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_paths() * self.basis_len());
        for m in 0..self.num_paths() {
            let raw = self.raw_at(m, i);
            let x = std::array::from_fn(|k| transform(k, raw[k]));
            self.basis_row(&x, &mut out);
        }
        out
    }
}

/// Builds the causal feature family with Laguerre degree 2.
pub fn build_features(alpha: &PathSet, params: &OUParams) -> Result<FeatureSet> {
    build_features_with_degree(alpha, params, 2)
}

pub fn build_features_with_degree(alpha: &PathSet, params: &OUParams, degree: usize) -> Result<FeatureSet> {
    params.validate()?;
    if degree == 0 {
        return Err(Error::param("basis degree must be at least 1"));
    }
    let grid = *alpha.grid();
    let dt = grid.delta();
    let decay = (-params.kappa * dt).exp();
    let n = grid.nodes_len();
    let mut cum = PathSet::zeros(grid, alpha.num_paths());
    let mut exp = PathSet::zeros(grid, alpha.num_paths());
    for m in 0..alpha.num_paths() {
        let a = alpha.path(m);
        for i in 1..n {
            let c = cum.get(m, i - 1) + a[i - 1] * dt;
            let e = exp.get(m, i - 1) * decay + a[i - 1] * dt;
            cum.set(m, i, c);
            exp.set(m, i, e);
        }
    }
    Ok(FeatureSet {
        raw: [alpha.clone(), cum, exp],
        degree,
    })
}
