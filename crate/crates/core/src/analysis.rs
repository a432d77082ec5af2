//! Market impact, PnL and gradient evaluation, inventories and trading costs.

use serde::{Deserialize, Serialize};

use crate::foc::{foc_rhs, solve_backward_f, SchemeConfig, SchemeMatrices};
use crate::kernels::{build_nystrom, KernelSpec, TimeGrid};
use crate::linalg::dot;
use crate::paths::PathSet;
use crate::resistance::{solve_resistance, ResistanceFn, ResistanceOptions};
use crate::volterra::{apply_adjoint, apply_forward, ConditionalExpectation};
use crate::{Error, Result};

/// Market impact of a deterministic trading rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactProfile {
    pub times: Vec<f64>,
    pub mi: Vec<f64>,
    /// Resistance rate `r^u` on the same nodes.
    pub resistance: Vec<f64>,
}

impl ImpactProfile {
    pub fn peak(&self) -> f64 {
        self.mi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn single_path(u: &[f64], grid: &TimeGrid) -> Result<PathSet> {
    PathSet::from_profile(*grid, 1, u)
}

/// `MI(t) = int_0^t G(t - s)(u_s - r_s) ds` with `r = U(G_transient(u - r))`.
pub fn market_impact(u: &[f64], kernel: &KernelSpec, f: &ResistanceFn, grid: &TimeGrid) -> Result<ImpactProfile> {
    let up = single_path(u, grid)?;
    let lg = build_nystrom(&kernel.transient(), grid)?;
    let full = build_nystrom(kernel, grid)?;
    let r = solve_resistance(&up, &lg, f, &ResistanceOptions::default(), None)?.r;
    let mi = apply_forward(&full, &up.sub(&r)?)?;
    Ok(ImpactProfile {
        times: grid.nodes(),
        mi: mi.path(0).to_vec(),
        resistance: r.path(0).to_vec(),
    })
}

/// Permanent/transient split of the impact of a compactly supported rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `kappa_inf int_0^inf (u - r)`, the grid integral corrected by [`Self::tail`].
    pub pmi: f64,
    /// `MI(t) - PMI` on the grid nodes.
    pub tmi: Vec<f64>,
    pub mi: Vec<f64>,
    /// Estimated `int_T^inf r ds` from a power-law fit of the resistance decay
    /// over the last third of the grid; `None` when the fitted decay is too
    /// slow for the integral to converge or the tail is not positive.
    pub tail: Option<f64>,
    /// Fitted decay exponent of `r` beyond the support.
    pub tail_exponent: Option<f64>,
}

/// Splits `MI` into permanent and transient parts.
///
/// `u` must vanish from `support_end` on, and the grid should extend well
/// past it (three times the support is a good default) so the truncated
/// integrals are close to their limits.
pub fn decompose_pmi_tmi(
    u: &[f64],
    support_end: f64,
    kernel: &KernelSpec,
    f: &ResistanceFn,
    grid: &TimeGrid,
) -> Result<Decomposition> {
    if !(support_end > 0.0) || support_end > grid.horizon() {
        return Err(Error::param(format!(
            "horizon {} must cover the execution support {support_end}",
            grid.horizon()
        )));
    }
    if u.len() != grid.nodes_len() {
        return Err(Error::shape("rate and grid lengths differ"));
    }
    if u.iter().enumerate().any(|(i, v)| grid.node(i) >= support_end && *v != 0.0) {
        return Err(Error::param("rate is not zero after the support end"));
    }
    let prof = market_impact(u, kernel, f, grid)?;
    let steps = grid.steps();
    let delta = grid.delta();
    let net: Vec<f64> = u.iter().zip(&prof.resistance).map(|(a, b)| a - b).collect();
    let (tail, tail_exponent) = resistance_tail(&prof.resistance, grid, support_end);
    // suffix[i] = int_{t_i}^{T} (u - r) ds
    let mut suffix = vec![0.0; grid.nodes_len()];
    for i in (0..steps).rev() {
        suffix[i] = suffix[i + 1] + net[i] * delta;
    }
    let extra = tail.unwrap_or(0.0);
    let pmi = kernel.kappa_inf * (suffix[0] - extra);
    // MI = G_transient * (u - r) + kappa_inf int_0^t (u - r), so TMI = MI - PMI
    // is the transient convolution minus kappa_inf times the remaining net flow.
    let tmi = prof.mi.iter().map(|mi| mi - pmi).collect();
    Ok(Decomposition {
        pmi,
        tmi,
        mi: prof.mi,
        tail,
        tail_exponent,
    })
}

fn resistance_tail(r: &[f64], grid: &TimeGrid, support_end: f64) -> (Option<f64>, Option<f64>) {
    let steps = grid.steps();
    let start = (2 * steps / 3).max(1);
    let pts: Vec<(f64, f64)> = (start..=steps)
        .map(|i| (grid.node(i), r[i]))
        .filter(|(t, v)| *t > support_end && *v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return (None, None);
    }
    let (_, slope, _) = linear_fit(&pts);
    let beta = -slope;
    if beta > 1.0 {
        let t = grid.horizon();
        (Some(r[steps] * t / (beta - 1.0)), Some(beta))
    } else {
        (None, Some(beta))
    }
}

/// Least squares `y = a + b x`; returns `(a, b, rms residual)`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Power law `MI = prefactor * gamma^exponent` fitted on log-log values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub prefactor: f64,
    pub exponent: f64,
    pub gammas: Vec<f64>,
    pub peak_mi: Vec<f64>,
    /// RMS residual of the log-log regression.
    pub residual: f64,
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| (la + (lb - la) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Fits `y = c x^e` by least squares on `(ln x, ln y)`.
pub fn power_law_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Fit("need at least two matching points".into()));
    }
    if let Some((x, y)) = xs.iter().zip(ys).find(|(x, y)| !(**x > 0.0 && **y > 0.0)) {
        return Err(Error::Fit(format!("non-positive point ({x}, {y}) in log-log fit")));
    }
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let (a, b, res) = linear_fit(&pts);
    Ok((a.exp(), b, res))
}

/// Peak market impact of `gamma * base` for every `gamma`, and the log-log fit.
pub fn gamma_scaling_fit(
    base: &[f64],
    gammas: &[f64],
    kernel: &KernelSpec,
    f: &ResistanceFn,
    grid: &TimeGrid,
) -> Result<ScalingFit> {
    if gammas.len() < 3 {
        return Err(Error::Fit("scaling fit needs at least three gamma values".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::param(format!("gamma values must be positive, got {g}")));
    }
    let lg = build_nystrom(&kernel.transient(), grid)?;
    let full = build_nystrom(kernel, grid)?;
    let peaks = crate::par::map_indices(gammas.len(), |k| -> Result<f64> {
        let scaled: Vec<f64> = base.iter().map(|v| v * gammas[k]).collect();
        let up = single_path(&scaled, grid)?;
        let r = solve_resistance(&up, &lg, f, &ResistanceOptions::default(), None)?.r;
        let mi = apply_forward(&full, &up.sub(&r)?)?;
        Ok(mi.path(0).iter().copied().fold(f64::NEG_INFINITY, f64::max))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (prefactor, exponent, residual) = power_law_fit(gammas, &peaks)?;
    Ok(ScalingFit {
        prefactor,
        exponent,
        gammas: gammas.to_vec(),
        peak_mi: peaks,
        residual,
    })
}

/// Inventory `X(m, i) = X_0 + Delta sum_{j<i} u(m, j)`.
pub fn inventory(u: &PathSet, x0: f64) -> PathSet {
    let delta = u.grid().delta();
    let mut x = PathSet::zeros(*u.grid(), u.num_paths());
    for m in 0..u.num_paths() {
        let (um, xm) = (u.path(m).to_vec(), x.path_mut(m));
        xm[0] = x0;
        for i in 1..xm.len() {
            xm[i] = xm[i - 1] + um[i - 1] * delta;
        }
    }
    x
}

/// Inventory and cumulated cost `Delta sum_{j<i} I(m, j) u(m, j)`.
pub fn inventory_and_costs(u: &PathSet, impact: &PathSet, x0: f64) -> Result<(PathSet, PathSet)> {
    u.ensure_same_shape(impact)?;
    let delta = u.grid().delta();
    let mut cost = PathSet::zeros(*u.grid(), u.num_paths());
    for m in 0..u.num_paths() {
        let (um, im) = (u.path(m), impact.path(m));
        let mut acc = 0.0;
        let cm = cost.path_mut(m);
        for i in 1..cm.len() {
            acc += im[i - 1] * um[i - 1] * delta;
            cm[i] = acc;
        }
    }
    Ok((inventory(u, x0), cost))
}

/// Execution price distortion `gamma/2 u + L_{HG}(u - r)`: slippage plus the
/// resistance-adjusted propagator impact.
pub fn execution_impact(u: &PathSet, r: &PathSet, cfg: &SchemeConfig, mats: &SchemeMatrices) -> Result<PathSet> {
    let prop = apply_forward(&mats.hg, &u.sub(r)?)?;
    prop.axpby(1.0, u, 0.5 * cfg.gamma)
}

/// Discrete PnL (without the strategy-independent `X_0 E[S_T]`):
///
/// `<u, alpha> - gamma/2 |u|^2 - <u, L_{HG}(u - r)> - phi/2 Delta sum_{i=1}^{N} E[X_i^2] - varrho/2 E[X_N^2]`.
///
/// The running inventory penalty uses right end points, which makes the
/// penalty matrices the exact gradient of this expression.
pub fn eval_pnl(u: &PathSet, r: &PathSet, alpha: &PathSet, cfg: &SchemeConfig, mats: &SchemeMatrices) -> Result<f64> {
    u.ensure_same_shape(r)?;
    u.ensure_same_shape(alpha)?;
    let steps = u.grid().steps();
    let delta = u.grid().delta();
    let prop = apply_forward(&mats.hg, &u.sub(r)?)?;
    let x = inventory(u, cfg.x0);
    let per_path: Vec<f64> = (0..u.num_paths())
        .map(|m| {
            let um = &u.path(m)[..steps];
            let gain = dot(um, &alpha.path(m)[..steps]);
            let slip = 0.5 * cfg.gamma * dot(um, um);
            let imp = dot(um, &prop.path(m)[..steps]);
            let xm = x.path(m);
            let run = 0.5 * cfg.penalties.phi * xm[1..].iter().map(|v| v * v).sum::<f64>();
            delta * (gain - slip - imp - run) - 0.5 * cfg.penalties.varrho * xm[steps] * xm[steps]
        })
        .collect();
    Ok(per_path.iter().sum::<f64>() / u.num_paths() as f64)
}

/// PnL of `u` with its own resistance.
pub fn pnl_of(u: &PathSet, alpha: &PathSet, cfg: &SchemeConfig, mats: &SchemeMatrices) -> Result<f64> {
    let r = resistance_of(u, cfg, mats)?;
    eval_pnl(u, &r, alpha, cfg, mats)
}

fn resistance_of(u: &PathSet, cfg: &SchemeConfig, mats: &SchemeMatrices) -> Result<PathSet> {
    let opts = ResistanceOptions {
        eps2: cfg.eps2,
        method: cfg.resistance_method,
        ..Default::default()
    };
    Ok(solve_resistance(u, &mats.g, &cfg.resistance, &opts, None)?.r)
}

/// Gradient of the PnL in the `<., .>` inner product:
///
/// `alpha - X_0(phi(T - t) + varrho) - gamma u - L_{HG}(u - r) - f - (L_P + M_P) u`,
/// with `f` from the backward equation. Node `N` carries no mass and is set to 0.
pub fn eval_gradient(
    u: &PathSet,
    alpha: &PathSet,
    cfg: &SchemeConfig,
    mats: &SchemeMatrices,
    ce: &dyn ConditionalExpectation,
) -> Result<PathSet> {
    u.ensure_same_shape(alpha)?;
    let r = resistance_of(u, cfg, mats)?;
    let f = solve_backward_f(u, &r, mats, &cfg.resistance, ce)?;
    let prop = apply_forward(&mats.hg, &u.sub(&r)?)?;
    let pen_l = apply_forward(&mats.penalty, u)?;
    let pen_m = apply_adjoint(&mats.penalty, u, ce)?;
    let rhs = foc_rhs(cfg, alpha);
    let steps = u.grid().steps();
    let mut g = PathSet::zeros(*u.grid(), u.num_paths());
    for m in 0..u.num_paths() {
        let gm = g.path_mut(m);
        for i in 0..steps {
            gm[i] = rhs.get(m, i)
                - cfg.gamma * u.get(m, i)
                - prop.get(m, i)
                - f.get(m, i)
                - pen_l.get(m, i)
                - pen_m.get(m, i);
        }
    }
    Ok(g)
}
