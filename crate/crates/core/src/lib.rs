//! Optimal execution under a transient power-law impact propagator with an
//! endogenous market-resistance flow.
//!
//! The crate discretizes the impact operators on a uniform grid (Nyström
//! matrices built from exact kernel antiderivatives), solves the nonlinear
//! Volterra equation for the resistance, and iterates on the first-order
//! condition of the trading problem, which is a nonlinear stochastic Fredholm
//! system. Conditional expectations are either pathwise (deterministic
//! signals) or estimated by ridge-regularized least-squares Monte Carlo.
//!
//! Per-path work runs on rayon when the `parallel` feature is enabled (the
//! default) and falls back to plain iterators otherwise. Cross-path
//! reductions are always performed in a fixed order so results do not depend
//! on the worker count.
//!
//! Module map:
//!
//! - [`kernels`]: time grid, impact and penalty kernels, Nyström matrices.
//! - [`paths`] and [`volterra`]: path sets, forward/adjoint operators.
//! - [`resistance`]: resistance functions and the fixed-point solver.
//! - [`signals`]: Ornstein-Uhlenbeck drift, closed-form alpha, features.
//! - [`lsmc`]: ridge regression estimator of conditional expectations.
//! - [`foc`]: backward Fredholm solve, operator assembly, iterative scheme.
//! - [`analysis`]: market impact, PnL, gradient, inventory and costs.
//! - [`config`] and [`experiment`]: configuration files and experiment runner.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod foc;
pub mod kernels;
pub mod linalg;
pub mod lsmc;
pub(crate) mod par;
pub mod paths;
pub mod resistance;
pub mod signals;
pub mod volterra;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, NystromMatrices, PenaltyKernelParams, TimeGrid};
pub use paths::PathSet;
pub use resistance::ResistanceFn;
