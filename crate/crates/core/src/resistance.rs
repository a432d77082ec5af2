//! Resistance functions and the fixed point `r = U(G(u - r))`.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::kernels::NystromMatrices;
use crate::linalg::dot;
use crate::par;
use crate::paths::PathSet;
use crate::{Error, Result};

/// Default linearization threshold of the huberized power function.
pub const DEFAULT_DELTA: f64 = 1e6;

/// Map from transient mispricing to resistance rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ResistanceFn {
    /// `sign(x)|x|^c` on `|x| <= delta`, continued linearly beyond.
    Huberized { c: f64, delta: f64 },
    /// `a x`.
    Linear { a: f64 },
    /// No resistance.
    Zero,
}

impl ResistanceFn {
    pub fn huberized(c: f64, delta: f64) -> Result<Self> {
        let f = Self::Huberized { c, delta };
        f.validate()?;
        Ok(f)
    }

    /// Power function with the default (effectively infinite) threshold.
    pub fn power(c: f64) -> Result<Self> {
        Self::huberized(c, DEFAULT_DELTA)
    }

    pub fn linear(a: f64) -> Result<Self> {
        let f = Self::Linear { a };
        f.validate()?;
        Ok(f)
    }

    pub fn zero() -> Self {
        Self::Zero
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Huberized { c, delta } => {
                if !(c >= 1.0 && c.is_finite()) {
                    return Err(Error::param(format!("c must be >= 1, got {c}")));
                }
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(Error::param(format!("delta must be positive, got {delta}")));
                }
            }
            Self::Linear { a } => {
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::param(format!("slope a must be >= 0, got {a}")));
                }
            }
            Self::Zero => {}
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::Huberized { c, delta } => {
                let ax = x.abs();
                if ax <= delta {
                    x.signum() * ax.powf(c)
                } else {
                    c * delta.powf(c - 1.0) * x - x.signum() * delta.powf(c) * (c - 1.0)
                }
            }
            Self::Linear { a } => a * x,
            Self::Zero => 0.0,
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Huberized { c, delta } => {
                let ax = x.abs();
                if ax <= delta {
                    c * ax.powf(c - 1.0)
                } else {
                    c * delta.powf(c - 1.0)
                }
            }
            Self::Linear { a } => a,
            Self::Zero => 0.0,
        }
    }

    /// Global Lipschitz constant `L`, which also bounds the derivative.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Huberized { c, delta } => c * delta.powf(c - 1.0),
            Self::Linear { a } => a,
            Self::Zero => 0.0,
        }
    }

    /// Bound `C` on the derivative; equal to [`Self::lipschitz`] for every variant.
    pub fn derivative_bound(&self) -> f64 {
        self.lipschitz()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero | Self::Linear { a: 0.0 })
    }
}

pub fn resistance_value(f: &ResistanceFn, x: f64) -> f64 {
    f.value(x)
}

pub fn resistance_derivative(f: &ResistanceFn, x: f64) -> f64 {
    f.derivative(x)
}

/// How the causal fixed point is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResistanceMethod {
    /// Node-by-node sweep; each node only needs earlier ones, so one pass is exact.
    #[default]
    Sequential,
    /// Whole-path Picard iteration `r <- U(L(u - r))`.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistanceOptions {
    pub eps2: f64,
    pub max_iter: usize,
    pub method: ResistanceMethod,
}

impl Default for ResistanceOptions {
    fn default() -> Self {
        Self {
            eps2: 1e-16,
            max_iter: 500,
            method: ResistanceMethod::Sequential,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResistanceSolution {
    pub r: PathSet,
    /// Largest number of fixed-point map evaluations over paths.
    pub iterations: usize,
    /// Final E2 error.
    pub error: f64,
}

/// Solves `r_i = U(sum_{j<i} L_G(i, j)(u_j - r_j))` on every path.
///
/// `warm` seeds the Picard iteration; the sequential sweep ignores it.
pub fn solve_resistance(
    u: &PathSet,
    lg: &NystromMatrices,
    f: &ResistanceFn,
    opts: &ResistanceOptions,
    warm: Option<&PathSet>,
) -> Result<ResistanceSolution> {
    if !(opts.eps2 > 0.0) {
        return Err(Error::param("eps2 must be positive"));
    }
    if lg.grid() != u.grid() {
        return Err(Error::shape("resistance operator and paths use different grids"));
    }
    if let Some(w) = warm {
        u.ensure_same_shape(w)?;
    }
    let n = u.num_nodes();
    let l = lg.forward();
    let delta = u.grid().delta();
    let mut r = match (opts.method, warm) {
        (ResistanceMethod::Jacobi, Some(w)) => w.clone(),
        _ => PathSet::zeros(*u.grid(), u.num_paths()),
    };
    let iterations = AtomicUsize::new(0);
    let f = *f;
    match opts.method {
        ResistanceMethod::Sequential => {
            par::for_each_chunk_mut(r.values_mut(), n, |m, rm| {
                let um = u.path(m);
                let mut diff = vec![0.0; n];
                for i in 0..n {
                    rm[i] = f.value(dot(&l.row(i)[..i], &diff[..i]));
                    diff[i] = um[i] - rm[i];
                }
            });
            iterations.store(1, Ordering::Relaxed);
        }
        ResistanceMethod::Jacobi => {
            par::try_for_each_chunk_mut(r.values_mut(), n, |m, rm| {
                let um = u.path(m);
                let mut diff = vec![0.0; n];
                let mut next = vec![0.0; n];
                let mut k = 0;
                loop {
                    k += 1;
                    for i in 0..n {
                        diff[i] = um[i] - rm[i];
                    }
                    let mut err = 0.0;
                    for i in 0..n {
                        next[i] = f.value(dot(&l.row(i)[..i], &diff[..i]));
                        // Node N is included so the returned path is settled everywhere.
                        err += (rm[i] - next[i]).powi(2);
                    }
                    err *= delta;
                    if !err.is_finite() {
                        return Err(Error::NonConvergence {
                            what: "resistance fixed point",
                            iterations: k,
                            last_error: err,
                        });
                    }
                    if err <= opts.eps2 {
                        break;
                    }
                    if k >= opts.max_iter {
                        return Err(Error::NonConvergence {
                            what: "resistance fixed point",
                            iterations: k,
                            last_error: err,
                        });
                    }
                    rm.copy_from_slice(&next);
                }
                iterations.fetch_max(k, Ordering::Relaxed);
                Ok(())
            })?;
        }
    }
    let iterations = iterations.into_inner();
    if !r.is_finite() {
        return Err(Error::NonConvergence {
            what: "resistance fixed point",
            iterations: 1,
            last_error: f64::INFINITY,
        });
    }
    let error = resistance_error_e2(u, &r, lg, &f)?;
    if !(error <= opts.eps2) {
        return Err(Error::NonConvergence {
            what: "resistance fixed point",
            iterations,
            last_error: error,
        });
    }
    Ok(ResistanceSolution {
        r,
        iterations,
        error,
    })
}

/// Transient mispricing `y = L_G(u - r)` seen by the resisting traders.
pub fn mispricing(u: &PathSet, r: &PathSet, lg: &NystromMatrices) -> Result<PathSet> {
    crate::volterra::apply_forward(lg, &u.sub(r)?)
}

/// `w = U'(L_G(u - r))`.
pub fn slopes(u: &PathSet, r: &PathSet, lg: &NystromMatrices, f: &ResistanceFn) -> Result<PathSet> {
    Ok(mispricing(u, r, lg)?.map(|y| f.derivative(y)))
}

/// `max_m Delta sum_{i<N} |r(m,i) - U(sum_{j<i} L_G(i,j)(u - r)(m,j))|^2`.
pub fn resistance_error_e2(u: &PathSet, r: &PathSet, lg: &NystromMatrices, f: &ResistanceFn) -> Result<f64> {
    u.ensure_same_shape(r)?;
    let y = mispricing(u, r, lg)?;
    let steps = u.grid().steps();
    let delta = u.grid().delta();
    let per_path = par::map_indices(u.num_paths(), |m| {
        let (rm, ym) = (r.path(m), y.path(m));
        (0..steps).map(|i| (rm[i] - f.value(ym[i])).powi(2)).sum::<f64>() * delta
    });
    Ok(per_path.into_iter().fold(0.0, f64::max))
}
