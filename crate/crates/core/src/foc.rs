//! First-order-condition solver: backward Fredholm solve for the adjoint
//! term, the nonlinear operator `A`, the outer fixed-point scheme, its error
//! metrics, the linear-case direct solve and the convergence conditions.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::kernels::{build_nystrom, build_penalty_matrices, kernel_l2_constant, KernelSpec, NystromMatrices, PenaltyKernelParams, TimeGrid};
use crate::linalg::{dot, gmres, Dense, LuSolver};
use crate::par;
use crate::paths::PathSet;
use crate::resistance::{slopes, solve_resistance, ResistanceFn, ResistanceMethod, ResistanceOptions};
use crate::volterra::ConditionalExpectation;
use crate::{Error, Result};

/// How conditional expectations enter the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Pathwise signals; every linear step is one dense solve.
    Deterministic,
    /// Regression-based expectations; linear steps use a lagged inner loop.
    Stochastic,
}

/// Which discrete adjoint is used for the impact kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointMode {
    /// Cell integrals `M(i, j) = int K(s - t_i) ds`, diagonal included.
    #[default]
    Quadrature,
    /// `M = L^T`, the exact adjoint of the forward quadrature; makes the
    /// discrete first-order condition the exact gradient of the discrete PnL.
    Transposed,
}

/// Inner loop of the stochastic linear step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverOptions {
    /// Krylov subspace dimension before a restart.
    pub restart: usize,
    /// Cap on operator applications.
    pub max_iter: usize,
    /// The loop stops once the squared step residual is below `tol_factor * eps1`.
    pub tol_factor: f64,
}

impl Default for InnerSolverOptions {
    fn default() -> Self {
        Self {
            restart: 40,
            max_iter: 1000,
            tol_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub gamma: f64,
    pub kernel: KernelSpec,
    pub penalties: PenaltyKernelParams,
    pub resistance: ResistanceFn,
    pub x0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_bf: f64,
    pub max_outer: usize,
    pub mode: SolveMode,
    pub resistance_method: ResistanceMethod,
    pub inner: InnerSolverOptions,
    pub adjoint: AdjointMode,
    /// Keep every outer iterate `u^[n]` in the result.
    pub record_iterates: bool,
}

impl SchemeConfig {
    /// Round trip with slippage 0.2, kernel `1 + 0.467 t^{-0.386}`, quadratic
    /// resistance and terminal penalty 500.
    pub fn reference() -> Self {
        Self {
            gamma: 0.2,
            kernel: KernelSpec {
                kappa_inf: 1.0,
                lambda: 0.467,
                nu: 0.614,
            },
            penalties: PenaltyKernelParams {
                phi: 0.0,
                varrho: 500.0,
            },
            resistance: ResistanceFn::Huberized {
                c: 2.0,
                delta: crate::resistance::DEFAULT_DELTA,
            },
            x0: 0.0,
            eps1: 1e-11,
            eps2: 1e-16,
            eps_bf: 1e-31,
            max_outer: 100,
            mode: SolveMode::Deterministic,
            resistance_method: ResistanceMethod::Sequential,
            inner: InnerSolverOptions::default(),
            adjoint: AdjointMode::Quadrature,
            record_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        self.kernel.validate()?;
        self.penalties.validate()?;
        self.resistance.validate()?;
        if !self.x0.is_finite() {
            return Err(Error::param("initial inventory must be finite"));
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("eps_bf", self.eps_bf)] {
            if !(v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 {
            return Err(Error::param("max_outer must be at least 1"));
        }
        if self.inner.restart == 0 || self.inner.max_iter == 0 || !(self.inner.tol_factor > 0.0) {
            return Err(Error::param("inner solver needs restart >= 1, max_iter >= 1 and a positive tolerance factor"));
        }
        Ok(())
    }

    fn resistance_options(&self) -> ResistanceOptions {
        ResistanceOptions {
            eps2: self.eps2,
            method: self.resistance_method,
            ..Default::default()
        }
    }
}

/// Quadrature matrices used by the scheme: transient kernel `G`, full kernel
/// `H + G` and the inventory penalty kernel.
#[derive(Debug, Clone)]
pub struct SchemeMatrices {
    pub g: NystromMatrices,
    pub hg: NystromMatrices,
    pub penalty: NystromMatrices,
}

impl SchemeMatrices {
    pub fn new(cfg: &SchemeConfig, grid: &TimeGrid) -> Result<Self> {
        let g = build_nystrom(&cfg.kernel.transient(), grid)?;
        let hg = build_nystrom(&cfg.kernel, grid)?;
        let penalty = build_penalty_matrices(&cfg.penalties, grid)?;
        Ok(match cfg.adjoint {
            AdjointMode::Quadrature => Self { g, hg, penalty },
            AdjointMode::Transposed => Self {
                g: g.with_transposed_adjoint(),
                hg: hg.with_transposed_adjoint(),
                penalty,
            },
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.g.grid()
    }
}

/// `alpha_t - X_0 (phi (T - t) + varrho)`.
pub fn foc_rhs(cfg: &SchemeConfig, alpha: &PathSet) -> PathSet {
    let grid = *alpha.grid();
    PathSet::from_fn(grid, alpha.num_paths(), |m, i| {
        alpha.get(m, i) - cfg.x0 * cfg.penalties.weight(&grid, i)
    })
}

fn check(mats: &SchemeMatrices, u: &PathSet) -> Result<()> {
    if mats.grid() != u.grid() {
        return Err(Error::shape("scheme matrices and paths use different grids"));
    }
    Ok(())
}

/// `sum_{p<k<N} (M_{HG}(p,k) u_k - M_G(p,k) w_k f_k)`, the part of the backward
/// equation at `p` that needs a conditional expectation.
#[inline]
fn backward_tail(p: usize, steps: usize, mats: &SchemeMatrices, u: &[f64], w: &[f64], f: &[f64]) -> f64 {
    let mhg = &mats.hg.adjoint().row(p)[p + 1..steps];
    let mg = &mats.g.adjoint().row(p)[p + 1..steps];
    let mut s = 0.0;
    for (k, (a, b)) in (p + 1..steps).zip(mhg.iter().zip(mg)) {
        s += a * u[k] - b * w[k] * f[k];
    }
    s
}

#[inline]
fn backward_pivot(p: usize, mats: &SchemeMatrices, w: f64) -> Result<f64> {
    let d = 1.0 + mats.g.m(p, p) * w;
    if !(d > 0.0) {
        return Err(Error::Singular(format!("backward pivot {d} at node {p}")));
    }
    Ok(d)
}

/// Solves `f + (W G)^* f = (H + G)^* u` backwards from `f_N = 0`.
pub fn solve_backward_f(
    u: &PathSet,
    r: &PathSet,
    mats: &SchemeMatrices,
    resistance: &ResistanceFn,
    ce: &dyn ConditionalExpectation,
) -> Result<PathSet> {
    check(mats, u)?;
    u.ensure_same_shape(r)?;
    let w = slopes(u, r, &mats.g, resistance)?;
    let steps = u.grid().steps();
    let n = u.num_nodes();
    let paths = u.num_paths();
    let mut f = PathSet::zeros(*u.grid(), paths);
    if ce.is_pathwise() {
        par::try_for_each_chunk_mut(f.values_mut(), n, |m, fm| {
            let (um, wm) = (u.path(m), w.path(m));
            for p in (0..steps).rev() {
                let tail = backward_tail(p, steps, mats, um, wm, fm);
                let num = mats.hg.m(p, p) * um[p] + tail;
                fm[p] = num / backward_pivot(p, mats, wm[p])?;
            }
            Ok(())
        })?;
        return Ok(f);
    }
    for p in (0..steps).rev() {
        let targets = par::map_indices(paths, |m| backward_tail(p, steps, mats, u.path(m), w.path(m), f.path(m)));
        let proj = ce.project(p, &targets)?;
        for m in 0..paths {
            let num = mats.hg.m(p, p) * u.get(m, p) + proj[m];
            f.set(m, p, num / backward_pivot(p, mats, w.get(m, p))?);
        }
    }
    Ok(f)
}

/// `max_m Delta sum_{p<N} |f_p (1 + M_G(p,p) w_p) + E_p[..] - M_{HG}(p,p) u_p|^2`.
///
/// The residual at each node is formed with a fused multiply-add so that the
/// product `f_p * pivot` is not rounded before the subtraction.
pub fn backward_error_ebf(
    f: &PathSet,
    u: &PathSet,
    r: &PathSet,
    mats: &SchemeMatrices,
    resistance: &ResistanceFn,
    ce: &dyn ConditionalExpectation,
) -> Result<f64> {
    check(mats, u)?;
    u.ensure_same_shape(f)?;
    let w = slopes(u, r, &mats.g, resistance)?;
    let steps = u.grid().steps();
    let paths = u.num_paths();
    let delta = u.grid().delta();
    let residual = |p: usize, m: usize, proj: f64| {
        let pivot = 1.0 + mats.g.m(p, p) * w.get(m, p);
        let num = mats.hg.m(p, p) * u.get(m, p) + proj;
        f.get(m, p).mul_add(pivot, -num)
    };
    let per_path: Vec<f64> = if ce.is_pathwise() {
        par::map_indices(paths, |m| {
            (0..steps)
                .map(|p| residual(p, m, backward_tail(p, steps, mats, u.path(m), w.path(m), f.path(m))).powi(2))
                .sum::<f64>()
                * delta
        })
    } else {
        let cols = par::map_indices(steps, |p| -> Result<Vec<f64>> {
            let targets: Vec<f64> = (0..paths)
                .map(|m| backward_tail(p, steps, mats, u.path(m), w.path(m), f.path(m)))
                .collect();
            let proj = ce.project(p, &targets)?;
            Ok((0..paths).map(|m| residual(p, m, proj[m]).powi(2)).collect())
        });
        let mut acc = vec![0.0; paths];
        for col in cols {
            for (a, v) in acc.iter_mut().zip(col?) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a * delta).collect()
    };
    Ok(per_path.into_iter().fold(0.0, f64::max))
}

/// `A(u, r) = L_{HG} r - f`.
pub fn assemble_a(u: &PathSet, r: &PathSet, f: &PathSet, mats: &SchemeMatrices) -> Result<PathSet> {
    check(mats, u)?;
    u.ensure_same_shape(r)?;
    u.ensure_same_shape(f)?;
    let lr = crate::volterra::apply_forward(&mats.hg, r)?;
    lr.sub(f)
}

/// Scheme matrix `gamma I + L_{HG} + L_P + M_P` on the first `N` nodes.
pub fn scheme_matrix(cfg: &SchemeConfig, mats: &SchemeMatrices) -> Dense {
    let n = mats.grid().steps();
    Dense::from_fn(n, |i, j| {
        let mut v = mats.hg.l(i, j) + mats.penalty.l(i, j) + mats.penalty.m(i, j);
        if i == j {
            v += cfg.gamma;
        }
        v
    })
}

/// Outcome of one linear FOC solve.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub u: PathSet,
    /// Inner passes used (1 for the dense deterministic solve).
    pub inner_iterations: usize,
}

/// Value at the horizon from the last FOC row; only `L` terms reach node `N`.
fn terminal_value(cfg: &SchemeConfig, mats: &SchemeMatrices, b: f64, u: &[f64]) -> f64 {
    if cfg.gamma == 0.0 {
        return 0.0;
    }
    let n = mats.grid().steps();
    let lu = dot(&mats.hg.forward().row(n)[..n], &u[..n]) + dot(&mats.penalty.forward().row(n)[..n], &u[..n]);
    (b - lu) / cfg.gamma
}

fn rows_to_matrix(p: &PathSet, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p.num_paths(), cols, |m, i| p.get(m, i))
}

/// Solves `(gamma I + L_{HG} + L_P + M_P) u = b` with conditional expectations
/// in the strictly upper penalty term.
///
/// Pathwise providers get one LU solve per path. Otherwise the system is
/// split into its lower-triangular part, solved exactly by forward
/// substitution, and the strictly upper part, which needs projections. The
/// plain lagged iteration on that splitting converges very slowly once the
/// inventory penalty dominates, so it is used as a right preconditioner for
/// restarted GMRES over all paths at once. The solve stops when the squared
/// residual (sup over paths, `Delta`-weighted) is below `tol_factor * eps1`.
pub fn solve_linear_foc_step(
    b: &PathSet,
    warm: Option<&PathSet>,
    cfg: &SchemeConfig,
    mats: &SchemeMatrices,
    ce: &dyn ConditionalExpectation,
) -> Result<LinearStep> {
    check(mats, b)?;
    let grid = *b.grid();
    let n = grid.steps();
    let paths = b.num_paths();
    let s = scheme_matrix(cfg, mats);
    if ce.is_pathwise() {
        let lu = LuSolver::new(&s).map_err(|e| {
            Error::Singular(format!("scheme matrix cannot be factored (gamma too small with zero kernels?): {e}"))
        })?;
        let mut u = PathSet::zeros(grid, paths);
        par::try_for_each_chunk_mut(u.values_mut(), n + 1, |m, um| {
            let bm = b.path(m);
            let x = lu.solve(&bm[..n])?;
            um[..n].copy_from_slice(&x);
            um[n] = terminal_value(cfg, mats, bm[n], um);
            Ok(())
        })?;
        return Ok(LinearStep { u, inner_iterations: 1 });
    }

    // Lower part (diagonal of M_P included) and the strictly upper part.
    let low = DMatrix::from_fn(n, n, |i, j| if j <= i { s.get(i, j) } else { 0.0 });
    let upper = DMatrix::from_fn(n, n, |i, j| if j > i { mats.penalty.m(i, j) } else { 0.0 });
    let low_inv_t = low
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("lower scheme matrix has a zero pivot".into()))?
        .transpose();
    let low_t = low.transpose();
    let upper_t = upper.transpose();

    // Paths are rows; nalgebra stores columns contiguously, so flattened
    // vectors are node-major.
    let apply = |umat: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let tails = umat * &upper_t;
        let cols = par::map_indices(n, |i| ce.project(i, tails.column(i).as_slice()));
        let mut out = umat * &low_t;
        for (i, col) in cols.into_iter().enumerate() {
            let col = col?;
            out.column_mut(i).iter_mut().zip(col).for_each(|(o, c)| *o += c);
        }
        Ok(out)
    };
    let preconditioned = |y: &[f64]| -> Result<Vec<f64>> {
        let u = DMatrix::from_column_slice(paths, n, y) * &low_inv_t;
        Ok(apply(&u)?.as_slice().to_vec())
    };

    let bmat = rows_to_matrix(b, n);
    let y0 = match warm {
        Some(w) => {
            b.ensure_same_shape(w)?;
            (rows_to_matrix(w, n) * &low_t).as_slice().to_vec()
        }
        None => vec![0.0; paths * n],
    };
    let tol = cfg.inner.tol_factor * cfg.eps1;
    let delta = grid.delta();
    // The total squared residual bounds the per-path one.
    let target = (tol / delta).sqrt();
    let out = gmres(
        preconditioned,
        bmat.as_slice(),
        y0,
        cfg.inner.restart,
        cfg.inner.max_iter,
        target,
    )?;
    let umat = DMatrix::from_column_slice(paths, n, &out.x) * &low_inv_t;
    let resid = apply(&umat)? - &bmat;
    let err = resid
        .row_iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>() * delta)
        .fold(0.0, f64::max);
    if !(err <= tol) {
        return Err(Error::NonConvergence {
            what: "stochastic linear FOC step",
            iterations: out.iterations,
            last_error: err,
        });
    }
    let mut u = PathSet::zeros(grid, paths);
    for m in 0..paths {
        let um = u.path_mut(m);
        for i in 0..n {
            um[i] = umat[(m, i)];
        }
        um[n] = terminal_value(cfg, mats, b.get(m, n), um);
    }
    Ok(LinearStep {
        u,
        inner_iterations: out.iterations.max(1),
    })
}

/// `max_m Delta sum_{i<N} |FOC residual|^2` for the triple `(u, r, f)`.
#[allow(clippy::too_many_arguments)]
pub fn foc_error_e1(
    u: &PathSet,
    r: &PathSet,
    f: &PathSet,
    alpha: &PathSet,
    cfg: &SchemeConfig,
    mats: &SchemeMatrices,
    ce: &dyn ConditionalExpectation,
) -> Result<f64> {
    Ok(foc_residual(u, r, f, alpha, cfg, mats, ce)?
        .into_iter()
        .fold(0.0, f64::max))
}

fn foc_residual(
    u: &PathSet,
    r: &PathSet,
    f: &PathSet,
    alpha: &PathSet,
    cfg: &SchemeConfig,
    mats: &SchemeMatrices,
    ce: &dyn ConditionalExpectation,
) -> Result<Vec<f64>> {
    check(mats, u)?;
    for other in [r, f, alpha] {
        u.ensure_same_shape(other)?;
    }
    let grid = *u.grid();
    let steps = grid.steps();
    let paths = u.num_paths();
    let delta = grid.delta();
    let pen = &mats.penalty;
    let tail = |m: usize, i: usize| dot(&pen.adjoint().row(i)[i + 1..steps], &u.path(m)[i + 1..steps]);
    let local = |m: usize, i: usize, proj: f64| {
        let (um, rm) = (u.path(m), r.path(m));
        let lu = dot(&mats.hg.forward().row(i)[..i], &um[..i]) + dot(&pen.forward().row(i)[..i], &um[..i]);
        let lr = dot(&mats.hg.forward().row(i)[..i], &rm[..i]);
        cfg.gamma * um[i] + lu + pen.m(i, i) * um[i] + proj - lr + f.get(m, i) - alpha.get(m, i)
            + cfg.x0 * cfg.penalties.weight(&grid, i)
    };
    if ce.is_pathwise() {
        return Ok(par::map_indices(paths, |m| {
            (0..steps).map(|i| local(m, i, tail(m, i)).powi(2)).sum::<f64>() * delta
        }));
    }
    let cols = par::map_indices(steps, |i| -> Result<Vec<f64>> {
        let targets: Vec<f64> = (0..paths).map(|m| tail(m, i)).collect();
        let proj = ce.project(i, &targets)?;
        Ok((0..paths).map(|m| local(m, i, proj[m]).powi(2)).collect())
    });
    let mut acc = vec![0.0; paths];
    for col in cols {
        for (a, v) in acc.iter_mut().zip(col?) {
            *a += v;
        }
    }
    Ok(acc.into_iter().map(|a| a * delta).collect())
}

/// Errors recorded after one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub e1: f64,
    pub e2: f64,
    pub ebf: f64,
    pub inner_iterations: usize,
    pub resistance_iterations: usize,
    /// Seconds since the scheme started.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: PathSet,
    pub r: PathSet,
    pub f: PathSet,
    pub e1_history: Vec<f64>,
    pub e2_history: Vec<f64>,
    pub ebf_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub outer_iterations: usize,
    /// Final E1 reached `eps1`.
    pub converged: bool,
    /// Final backward-equation error is within `eps_bf`.
    pub backward_within_tolerance: bool,
    /// `u^[1], u^[2], ..` when requested.
    pub iterates: Vec<PathSet>,
}

impl SolveResult {
    pub fn final_e1(&self) -> f64 {
        self.e1_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_e2(&self) -> f64 {
        self.e2_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_ebf(&self) -> f64 {
        self.ebf_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Runs the outer scheme from `u = r = 0` until `E1 <= eps1` or `max_outer`.
///
/// Hitting the iteration cap (or a non-finite error) is reported through
/// [`SolveResult::converged`]; failures of the inner solvers are errors.
pub fn iterate_scheme(
    cfg: &SchemeConfig,
    alpha: &PathSet,
    ce: &dyn ConditionalExpectation,
) -> Result<SolveResult> {
    cfg.validate()?;
    match (cfg.mode, ce.is_pathwise()) {
        (SolveMode::Deterministic, false) => {
            return Err(Error::param("deterministic mode requires a pathwise expectation provider"))
        }
        (SolveMode::Stochastic, true) => {
            return Err(Error::param("stochastic mode requires a regression expectation provider"))
        }
        _ => {}
    }
    let grid = *alpha.grid();
    let mats = SchemeMatrices::new(cfg, &grid)?;
    iterate_scheme_with(cfg, &mats, alpha, ce)
}

/// [`iterate_scheme`] with prebuilt matrices.
pub fn iterate_scheme_with(
    cfg: &SchemeConfig,
    mats: &SchemeMatrices,
    alpha: &PathSet,
    ce: &dyn ConditionalExpectation,
) -> Result<SolveResult> {
    cfg.validate()?;
    check(mats, alpha)?;
    let start = Instant::now();
    let grid = *alpha.grid();
    let paths = alpha.num_paths();
    let rhs = foc_rhs(cfg, alpha);
    let ropts = cfg.resistance_options();
    let mut u = PathSet::zeros(grid, paths);
    let mut r = PathSet::zeros(grid, paths);
    let mut f = PathSet::zeros(grid, paths);
    let mut out = SolveResult {
        u: u.clone(),
        r: r.clone(),
        f: f.clone(),
        e1_history: Vec::new(),
        e2_history: Vec::new(),
        ebf_history: Vec::new(),
        records: Vec::new(),
        outer_iterations: 0,
        converged: false,
        backward_within_tolerance: false,
        iterates: Vec::new(),
    };
    for n in 1..=cfg.max_outer {
        let a = assemble_a(&u, &r, &f, mats)?;
        let b = rhs.add(&a)?;
        let step = solve_linear_foc_step(&b, Some(&u), cfg, mats, ce)?;
        u = step.u;
        if !u.is_finite() {
            break;
        }
        let res = solve_resistance(&u, &mats.g, &cfg.resistance, &ropts, Some(&r))?;
        r = res.r;
        f = solve_backward_f(&u, &r, mats, &cfg.resistance, ce)?;
        let e1 = foc_error_e1(&u, &r, &f, alpha, cfg, mats, ce)?;
        let ebf = backward_error_ebf(&f, &u, &r, mats, &cfg.resistance, ce)?;
        out.e1_history.push(e1);
        out.e2_history.push(res.error);
        out.ebf_history.push(ebf);
        out.records.push(IterationRecord {
            iteration: n,
            e1,
            e2: res.error,
            ebf,
            inner_iterations: step.inner_iterations,
            resistance_iterations: res.iterations,
            elapsed: start.elapsed().as_secs_f64(),
        });
        out.outer_iterations = n;
        if cfg.record_iterates {
            out.iterates.push(u.clone());
        }
        if !e1.is_finite() {
            break;
        }
        if e1 <= cfg.eps1 {
            out.converged = true;
            break;
        }
    }
    out.backward_within_tolerance = out.final_ebf() <= cfg.eps_bf;
    out.u = u;
    out.r = r;
    out.f = f;
    Ok(out)
}

/// Direct solve of the first-order condition for linear resistance `U(x) = a x`:
///
/// `(gamma I + L_{HG}(I + a L_G)^{-1} + (I + a M_G)^{-1} M_{HG} + L_P + M_P) u = rhs`.
pub fn solve_linear_direct(a: f64, cfg: &SchemeConfig, mats: &SchemeMatrices, alpha: &PathSet) -> Result<PathSet> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::param(format!("linear slope must be >= 0, got {a}")));
    }
    check(mats, alpha)?;
    let n = mats.grid().nodes_len();
    let id = Dense::identity(n);
    let fwd_inv = id.add(&mats.g.forward().scaled(a)).inverse()?;
    let adj_inv = id.add(&mats.g.adjoint().scaled(a)).inverse()?;
    let k = Dense::identity(n)
        .scaled(cfg.gamma)
        .add(&mats.hg.forward().matmul(&fwd_inv))
        .add(&adj_inv.matmul(mats.hg.adjoint()))
        .add(mats.penalty.forward())
        .add(mats.penalty.adjoint());
    // Node N only appears through its own row; without slippage it is pinned to 0.
    let dim = if cfg.gamma > 0.0 { n } else { n - 1 };
    let sys = Dense::from_fn(dim, |i, j| k.get(i, j));
    let lu = LuSolver::new(&sys).map_err(|e| Error::Singular(format!("linear FOC system: {e}")))?;
    let rhs = foc_rhs(cfg, alpha);
    let mut u = PathSet::zeros(*alpha.grid(), alpha.num_paths());
    par::try_for_each_chunk_mut(u.values_mut(), n, |m, um| {
        let x = lu.solve(&rhs.path(m)[..dim])?;
        um[..dim].copy_from_slice(&x);
        Ok(())
    })?;
    Ok(u)
}

/// Constants of the contraction argument for the outer scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub c_g: f64,
    pub c_hg: f64,
    pub lipschitz: f64,
    pub derivative_bound: f64,
    pub c_tilde: f64,
    pub cond1: bool,
    pub cond2: bool,
    pub predicted_rate: f64,
}

/// `C_G`, `C_{HG}`, `C~` and the two sufficient conditions for geometric
/// convergence at rate `C~ / gamma`.
pub fn check_convergence_conditions(cfg: &SchemeConfig, grid: &TimeGrid) -> Result<ConvergenceReport> {
    if cfg.kernel.nu <= 0.5 {
        return Err(Error::Admissibility(format!(
            "convergence conditions need nu > 1/2, got {}",
            cfg.kernel.nu
        )));
    }
    let t = grid.horizon();
    let c_g = kernel_l2_constant(&cfg.kernel.transient(), t)?;
    let c_hg = kernel_l2_constant(&cfg.kernel, t)?;
    let l = cfg.resistance.lipschitz();
    let c = cfg.resistance.derivative_bound();
    let s = (t * c_g).sqrt();
    let cond1 = 1.0 > s * l.max(c);
    let c_tilde = if cond1 {
        (t * c_hg).sqrt() * (l * s / (1.0 - l * s) + 1.0 / (1.0 - c * s))
    } else {
        f64::INFINITY
    };
    let cond2 = cfg.gamma > c_tilde;
    let predicted_rate = if cfg.gamma > 0.0 { c_tilde / cfg.gamma } else { f64::INFINITY };
    Ok(ConvergenceReport {
        c_g,
        c_hg,
        lipschitz: l,
        derivative_bound: c,
        c_tilde,
        cond1,
        cond2,
        predicted_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volterra::Pathwise;

    fn small_cfg() -> SchemeConfig {
        SchemeConfig {
            resistance: ResistanceFn::linear(0.5).unwrap(),
            eps1: 1e-24,
            ..SchemeConfig::reference()
        }
    }

    #[test]
    fn zero_signal_converges_immediately() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let alpha = PathSet::zeros(grid, 1);
        let res = iterate_scheme(&SchemeConfig::reference(), &alpha, &Pathwise).unwrap();
        assert!(res.converged);
        assert_eq!(res.outer_iterations, 1);
        assert_eq!(res.final_e1(), 0.0);
        assert_eq!(res.u.max_abs(), 0.0);
    }

    #[test]
    fn zero_kernels_give_rhs_over_gamma() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let cfg = SchemeConfig {
            kernel: KernelSpec::new(0.0, 0.0, 0.5).unwrap(),
            penalties: PenaltyKernelParams::new(0.0, 0.0).unwrap(),
            ..SchemeConfig::reference()
        };
        let mats = SchemeMatrices::new(&cfg, &grid).unwrap();
        let b = PathSet::constant(grid, 2, 1.0);
        let step = solve_linear_foc_step(&b, None, &cfg, &mats, &Pathwise).unwrap();
        assert!(step.u.values().iter().all(|v| (v - 5.0).abs() < 1e-12));
        let direct = solve_linear_direct(0.0, &cfg, &mats, &b).unwrap();
        assert!(direct.values().iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn linear_scheme_matches_direct_solve() {
        let grid = TimeGrid::new(1.0, 30).unwrap();
        let cfg = small_cfg();
        let mats = SchemeMatrices::new(&cfg, &grid).unwrap();
        let alpha = PathSet::from_fn(grid, 1, |_, i| 10.0 * grid.time_to_horizon(i));
        let res = iterate_scheme_with(&cfg, &mats, &alpha, &Pathwise).unwrap();
        let direct = solve_linear_direct(0.5, &cfg, &mats, &alpha).unwrap();
        let err = res.u.sub(&direct).unwrap().l2_norm() / direct.l2_norm();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn backward_f_collapses_without_resistance() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let cfg = SchemeConfig {
            resistance: ResistanceFn::zero(),
            ..SchemeConfig::reference()
        };
        let mats = SchemeMatrices::new(&cfg, &grid).unwrap();
        let u = PathSet::from_fn(grid, 2, |m, i| (i as f64 * 0.2 + m as f64).cos());
        let r = PathSet::zeros(grid, 2);
        let f = solve_backward_f(&u, &r, &mats, &cfg.resistance, &Pathwise).unwrap();
        let adj = crate::volterra::apply_adjoint(&mats.hg, &u, &Pathwise).unwrap();
        for (x, y) in f.values().iter().zip(adj.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_report_examples() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let cfg = SchemeConfig {
            kernel: KernelSpec::new(0.0, 1.0, 0.75).unwrap(),
            resistance: ResistanceFn::linear(0.1).unwrap(),
            ..SchemeConfig::reference()
        };
        let rep = check_convergence_conditions(&cfg, &grid).unwrap();
        assert!((rep.c_g - 2.0).abs() < 1e-12);
        assert!(rep.cond1);
        let s = 2f64.sqrt();
        let expected = s * (0.1 * s / (1.0 - 0.1 * s) + 1.0 / (1.0 - 0.1 * s));
        assert!((rep.c_tilde - expected).abs() < 1e-12);
        let zero = SchemeConfig {
            resistance: ResistanceFn::zero(),
            ..cfg.clone()
        };
        let rep0 = check_convergence_conditions(&zero, &grid).unwrap();
        assert!((rep0.c_tilde - rep0.c_hg.sqrt()).abs() < 1e-12);
        let bad = SchemeConfig {
            kernel: KernelSpec::new(0.0, 1.0, 0.5).unwrap(),
            ..cfg
        };
        assert!(matches!(check_convergence_conditions(&bad, &grid), Err(Error::Admissibility(_))));
    }
}
