//! TOML experiment configuration with defaults and field-path validation.
//!
//! Every section and key is optional; omitted values fall back to the
//! reference parameter set. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::foc::{AdjointMode, InnerSolverOptions, SchemeConfig, SolveMode};
use crate::kernels::{KernelSpec, PenaltyKernelParams, TimeGrid};
use crate::resistance::{ResistanceFn, ResistanceMethod, DEFAULT_DELTA};
use crate::signals::OUParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    RoundTrip,
    MiProfile,
    GammaScaling,
    LinearCheck,
    ConvergenceReport,
    SensitivitySweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::RoundTrip,
        Self::MiProfile,
        Self::GammaScaling,
        Self::LinearCheck,
        Self::ConvergenceReport,
        Self::SensitivitySweep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::RoundTrip => "round_trip",
            Self::MiProfile => "mi_profile",
            Self::GammaScaling => "gamma_scaling",
            Self::LinearCheck => "linear_check",
            Self::ConvergenceReport => "convergence_report",
            Self::SensitivitySweep => "sensitivity_sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Experiments that run the first-order-condition scheme.
    pub fn uses_solver(&self) -> bool {
        !matches!(self, Self::MiProfile | Self::GammaScaling)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Horizon `T`.
    pub horizon: f64,
    /// Step count `N`.
    pub steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactSection {
    pub gamma: f64,
    pub lambda: f64,
    pub nu: f64,
    pub kappa_inf: f64,
}

impl Default for ImpactSection {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            lambda: 0.467,
            nu: 0.614,
            kappa_inf: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResistanceVariant {
    #[default]
    Huberized,
    Linear,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistanceSection {
    pub variant: ResistanceVariant,
    pub c: f64,
    pub delta: f64,
    /// Slope of the linear variant.
    pub a: f64,
}

impl Default for ResistanceSection {
    fn default() -> Self {
        Self {
            variant: ResistanceVariant::Huberized,
            c: 2.0,
            delta: DEFAULT_DELTA,
            a: 0.5,
        }
    }
}

impl ResistanceSection {
    pub fn function(&self) -> Result<ResistanceFn> {
        match self.variant {
            ResistanceVariant::Huberized => ResistanceFn::huberized(self.c, self.delta),
            ResistanceVariant::Linear => ResistanceFn::linear(self.a),
            ResistanceVariant::Zero => Ok(ResistanceFn::zero()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    pub phi: f64,
    pub varrho: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            phi: 0.0,
            varrho: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradingSection {
    /// Initial inventory `X_0`.
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub eta: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub mu0: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            eta: 10.0,
            kappa: 1.0,
            sigma: 1.0,
            mu0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    /// Number of simulated paths `M`.
    pub paths: usize,
    pub seed: u64,
    pub ridge_penalty: f64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: 2000,
            seed: 42,
            ridge_penalty: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    /// Deterministic when `sigma = 0`, stochastic otherwise.
    #[default]
    Auto,
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub eps1: f64,
    pub eps2: f64,
    pub eps_bf: f64,
    pub max_outer: usize,
    pub mode: ModeChoice,
    pub resistance_solver: ResistanceMethod,
    pub adjoint: AdjointMode,
    pub inner_restart: usize,
    pub inner_max_iter: usize,
}

impl Default for SchemeSection {
    fn default() -> Self {
        let inner = InnerSolverOptions::default();
        Self {
            eps1: 1e-11,
            eps2: 1e-16,
            eps_bf: 1e-31,
            max_outer: 100,
            mode: ModeChoice::Auto,
            resistance_solver: ResistanceMethod::Sequential,
            adjoint: AdjointMode::Quadrature,
            inner_restart: inner.restart,
            inner_max_iter: inner.max_iter,
        }
    }
}

/// Trading-rate profile `rate * 1_{[0, duration)}` for impact experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub rate: f64,
    pub duration: f64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            rate: 0.3,
            duration: 1.0,
        }
    }
}

/// Log-spaced participation multipliers for the scaling fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub points: usize,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            gamma_min: 1.0,
            gamma_max: 100.0,
            points: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub impact: ImpactSection,
    pub resistance: ResistanceSection,
    pub penalties: PenaltySection,
    pub trading: TradingSection,
    pub signal: SignalSection,
    pub mc: McSection,
    pub scheme: SchemeSection,
    pub profile: ProfileSection,
    pub scaling: ScalingSection,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn require(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(path, message))
    }
}

impl ExperimentConfig {
    /// Parses TOML text, reporting the key path of the first offending entry.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid("<document>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        require(g.horizon > 0.0 && g.horizon.is_finite(), "grid.horizon", "must be positive")?;
        require(g.steps >= 2, "grid.steps", "must be at least 2")?;

        let im = &self.impact;
        require(im.gamma >= 0.0 && im.gamma.is_finite(), "impact.gamma", "must be >= 0")?;
        require(im.lambda >= 0.0 && im.lambda.is_finite(), "impact.lambda", "must be >= 0")?;
        require(im.kappa_inf >= 0.0 && im.kappa_inf.is_finite(), "impact.kappa_inf", "must be >= 0")?;
        require(im.nu > 0.0 && im.nu < 1.0, "impact.nu", "must lie in (0, 1)")?;
        if self.experiment.uses_solver() {
            require(
                im.nu >= 0.5,
                "impact.nu",
                "solver experiments need nu >= 1/2 (square-integrable kernel)",
            )?;
        }

        let r = &self.resistance;
        match r.variant {
            ResistanceVariant::Huberized => {
                require(r.c >= 1.0 && r.c.is_finite(), "resistance.c", "must be >= 1")?;
                require(r.delta > 0.0 && r.delta.is_finite(), "resistance.delta", "must be positive")?;
            }
            ResistanceVariant::Linear => {
                require(r.a >= 0.0 && r.a.is_finite(), "resistance.a", "must be >= 0")?;
            }
            ResistanceVariant::Zero => {}
        }

        let p = &self.penalties;
        require(p.phi >= 0.0 && p.phi.is_finite(), "penalties.phi", "must be >= 0")?;
        require(p.varrho >= 0.0 && p.varrho.is_finite(), "penalties.varrho", "must be >= 0")?;
        require(self.trading.x0.is_finite(), "trading.x0", "must be finite")?;

        let s = &self.signal;
        require(s.kappa > 0.0 && s.kappa.is_finite(), "signal.kappa", "must be positive")?;
        require(s.sigma >= 0.0 && s.sigma.is_finite(), "signal.sigma", "must be >= 0")?;
        require(s.eta.is_finite(), "signal.eta", "must be finite")?;
        require(s.mu0.is_finite(), "signal.mu0", "must be finite")?;

        let mc = &self.mc;
        require(mc.paths >= 1, "mc.paths", "must be at least 1")?;
        require(mc.ridge_penalty >= 0.0 && mc.ridge_penalty.is_finite(), "mc.ridge_penalty", "must be >= 0")?;
        if self.mode() == SolveMode::Stochastic {
            require(mc.paths >= 7, "mc.paths", "stochastic runs need at least as many paths as regressors (7)")?;
        }

        let sc = &self.scheme;
        require(sc.eps1 > 0.0, "scheme.eps1", "must be positive")?;
        require(sc.eps2 > 0.0, "scheme.eps2", "must be positive")?;
        require(sc.eps_bf > 0.0, "scheme.eps_bf", "must be positive")?;
        require(sc.max_outer >= 1, "scheme.max_outer", "must be at least 1")?;
        require(sc.inner_restart >= 1, "scheme.inner_restart", "must be at least 1")?;
        require(sc.inner_max_iter >= 1, "scheme.inner_max_iter", "must be at least 1")?;
        if self.scheme.mode == ModeChoice::Deterministic {
            require(self.signal.sigma == 0.0, "scheme.mode", "deterministic mode needs signal.sigma = 0")?;
        }

        let pr = &self.profile;
        require(pr.rate.is_finite(), "profile.rate", "must be finite")?;
        require(
            pr.duration > 0.0 && pr.duration <= g.horizon,
            "profile.duration",
            "must be positive and not exceed grid.horizon",
        )?;

        let sca = &self.scaling;
        require(sca.gamma_min > 0.0, "scaling.gamma_min", "must be positive")?;
        require(sca.gamma_max > sca.gamma_min, "scaling.gamma_max", "must exceed gamma_min")?;
        require(sca.points >= 3, "scaling.points", "must be at least 3")?;
        Ok(())
    }

    pub fn mode(&self) -> SolveMode {
        match self.scheme.mode {
            ModeChoice::Deterministic => SolveMode::Deterministic,
            ModeChoice::Stochastic => SolveMode::Stochastic,
            ModeChoice::Auto if self.signal.sigma == 0.0 => SolveMode::Deterministic,
            ModeChoice::Auto => SolveMode::Stochastic,
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.steps)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.impact.kappa_inf, self.impact.lambda, self.impact.nu)
    }

    pub fn ou_params(&self) -> Result<OUParams> {
        let s = &self.signal;
        OUParams::new(s.eta, s.kappa, s.sigma, s.mu0)
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        let sc = &self.scheme;
        let cfg = SchemeConfig {
            gamma: self.impact.gamma,
            kernel: self.kernel()?,
            penalties: PenaltyKernelParams::new(self.penalties.phi, self.penalties.varrho)?,
            resistance: self.resistance.function()?,
            x0: self.trading.x0,
            eps1: sc.eps1,
            eps2: sc.eps2,
            eps_bf: sc.eps_bf,
            max_outer: sc.max_outer,
            mode: self.mode(),
            resistance_method: sc.resistance_solver,
            inner: InnerSolverOptions {
                restart: sc.inner_restart,
                max_iter: sc.inner_max_iter,
                ..InnerSolverOptions::default()
            },
            adjoint: sc.adjoint,
            record_iterates: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}
