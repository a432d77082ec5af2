//! Experiment runner: builds every input from an [`ExperimentConfig`], runs
//! the requested study and writes its artifacts.
//!
//! Files written to the output directory:
//!
//! - `trajectories.csv` (or one `trajectories_<tag>.csv` per setting of a sweep):
//!   per-node means, 95% normal half-widths and up to five sample paths.
//! - `convergence.log`: one line per outer iteration of every scheme run.
//! - `summary.json`: resolved configuration, seed, convergence flag, final
//!   errors and experiment-specific results.
//! - `resolved_config.toml`: the configuration that reproduces the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{self, execution_impact, inventory_and_costs};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::foc::{self, iterate_scheme_with, SchemeConfig, SchemeMatrices, SolveMode, SolveResult};
use crate::kernels::TimeGrid;
use crate::lsmc::{LsmcProvider, RegressionConfig};
use crate::paths::PathSet;
use crate::resistance::ResistanceFn;
use crate::signals::{alpha_closed_form, build_features, simulate_mu};
use crate::volterra::Pathwise;
use crate::{Error, Result};

/// Sample paths written per quantity.
pub const SAMPLE_PATHS: usize = 5;

/// Converged (or flagged) optimal round trip with all derived trajectories.
#[derive(Debug, Clone)]
pub struct RoundTrip {
    pub alpha: PathSet,
    pub solve: SolveResult,
    pub inventory: PathSet,
    pub impact: PathSet,
    pub cost: PathSet,
    /// Largest relative normal-equation residual of the regressions (0 when pathwise).
    pub max_normal_residual: f64,
}

impl RoundTrip {
    pub fn peak_abs_rate(&self) -> f64 {
        let steps = self.solve.u.grid().steps();
        (0..self.solve.u.num_paths())
            .flat_map(|m| self.solve.u.path(m)[..steps].to_vec())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Simulates the signal and runs the scheme for `cfg`.
pub fn solve_round_trip(cfg: &ExperimentConfig) -> Result<RoundTrip> {
    let scheme = cfg.scheme_config()?;
    solve_round_trip_with(cfg, &scheme)
}

/// [`solve_round_trip`] with an explicit scheme configuration.
pub fn solve_round_trip_with(cfg: &ExperimentConfig, scheme: &SchemeConfig) -> Result<RoundTrip> {
    let grid = cfg.time_grid()?;
    let ou = cfg.ou_params()?;
    let paths = match scheme.mode {
        SolveMode::Deterministic => 1,
        SolveMode::Stochastic => cfg.mc.paths,
    };
    let mu = simulate_mu(&ou, &grid, paths, cfg.mc.seed)?;
    let alpha = alpha_closed_form(&ou, &mu)?;
    let mats = SchemeMatrices::new(scheme, &grid)?;
    let (solve, max_normal_residual) = match scheme.mode {
        SolveMode::Deterministic => (iterate_scheme_with(scheme, &mats, &alpha, &Pathwise)?, 0.0),
        SolveMode::Stochastic => {
            let features = build_features(&alpha, &ou)?;
            let provider = LsmcProvider::new(
                &features,
                &RegressionConfig {
                    ridge_penalty: cfg.mc.ridge_penalty,
                    ..RegressionConfig::default()
                },
            )?;
            let res = iterate_scheme_with(scheme, &mats, &alpha, &provider)?;
            (res, provider.max_normal_residual())
        }
    };
    let impact = execution_impact(&solve.u, &solve.r, scheme, &mats)?;
    let (inventory, cost) = inventory_and_costs(&solve.u, &impact, scheme.x0)?;
    Ok(RoundTrip {
        alpha,
        solve,
        inventory,
        impact,
        cost,
        max_normal_residual,
    })
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunReport {
    /// False when any scheme run hit its iteration cap or a check failed.
    pub converged: bool,
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
    log: String,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            log: String::from("run iteration e1 e2 ebf inner_iterations resistance_iterations elapsed_s\n"),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        self.files.push(path);
        Ok(())
    }

    fn log_run(&mut self, tag: &str, res: &SolveResult) {
        for r in &res.records {
            let _ = writeln!(
                self.log,
                "{tag} {} {:e} {:e} {:e} {} {} {:.6}",
                r.iteration, r.e1, r.e2, r.ebf, r.inner_iterations, r.resistance_iterations, r.elapsed
            );
        }
    }
}

/// Header and rows of the trajectory table.
pub fn trajectories_csv(grid: &TimeGrid, quantities: &[(&str, &PathSet)]) -> String {
    let mut out = String::from("t");
    for (name, _) in quantities {
        let _ = write!(out, ",{name}_mean");
    }
    for (name, _) in quantities {
        let _ = write!(out, ",{name}_ci95");
    }
    let samples = quantities
        .first()
        .map(|(_, p)| p.num_paths().min(SAMPLE_PATHS))
        .unwrap_or(0);
    for (name, _) in quantities {
        for k in 0..samples {
            let _ = write!(out, ",{name}_sample{k}");
        }
    }
    out.push('\n');
    let stats: Vec<(Vec<f64>, Vec<f64>)> = quantities
        .iter()
        .map(|(_, p)| {
            let half = 1.96 / (p.num_paths() as f64).sqrt();
            (p.mean_profile(), p.std_profile().into_iter().map(|s| s * half).collect())
        })
        .collect();
    for i in 0..grid.nodes_len() {
        let _ = write!(out, "{}", grid.node(i));
        for (mean, _) in &stats {
            let _ = write!(out, ",{}", mean[i]);
        }
        for (_, ci) in &stats {
            let _ = write!(out, ",{}", ci[i]);
        }
        for (_, p) in quantities {
            for k in 0..samples {
                let _ = write!(out, ",{}", p.get(k, i));
            }
        }
        out.push('\n');
    }
    out
}

fn round_trip_table(rt: &RoundTrip) -> String {
    trajectories_csv(
        rt.alpha.grid(),
        &[
            ("alpha", &rt.alpha),
            ("u", &rt.solve.u),
            ("r", &rt.solve.r),
            ("X", &rt.inventory),
            ("impact", &rt.impact),
            ("cost", &rt.cost),
        ],
    )
}

#[derive(Serialize)]
struct RunSummary<'a> {
    tag: &'a str,
    converged: bool,
    outer_iterations: usize,
    final_e1: f64,
    final_e2: f64,
    final_ebf: f64,
    backward_within_tolerance: bool,
    peak_abs_rate: f64,
    terminal_inventory_mean: f64,
    min_running_cost: f64,
    max_normal_residual: f64,
}

fn run_summary(tag: &str, rt: &RoundTrip) -> Value {
    let steps = rt.inventory.grid().steps();
    let s = RunSummary {
        tag,
        converged: rt.solve.converged,
        outer_iterations: rt.solve.outer_iterations,
        final_e1: rt.solve.final_e1(),
        final_e2: rt.solve.final_e2(),
        final_ebf: rt.solve.final_ebf(),
        backward_within_tolerance: rt.solve.backward_within_tolerance,
        peak_abs_rate: rt.peak_abs_rate(),
        terminal_inventory_mean: rt.inventory.mean_profile()[steps],
        min_running_cost: rt.cost.values().iter().copied().fold(f64::INFINITY, f64::min),
        max_normal_residual: rt.max_normal_residual,
    };
    serde_json::to_value(s).unwrap_or(Value::Null)
}

fn profile_rate(cfg: &ExperimentConfig, grid: &TimeGrid, rate: f64) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|t| if *t < cfg.profile.duration { rate } else { 0.0 })
        .collect()
}

/// Runs the configured experiment and writes its artifacts into `out_dir`.
///
/// Solver non-convergence is reported through [`RunReport::converged`] after
/// all files are written; configuration and numerical failures are errors.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let mut w = Writer::new(out_dir)?;
    let (converged, results) = match cfg.experiment {
        ExperimentKind::RoundTrip | ExperimentKind::ConvergenceReport => round_trip_experiment(cfg, &mut w)?,
        ExperimentKind::MiProfile => mi_profile_experiment(cfg, &mut w)?,
        ExperimentKind::GammaScaling => gamma_scaling_experiment(cfg, &mut w)?,
        ExperimentKind::LinearCheck => linear_check_experiment(cfg, &mut w)?,
        ExperimentKind::SensitivitySweep => sensitivity_experiment(cfg, &mut w)?,
    };
    if cfg.experiment.uses_solver() {
        let log = std::mem::take(&mut w.log);
        w.write("convergence.log", &log)?;
    }
    let resolved = cfg.to_toml_string()?;
    w.write("resolved_config.toml", &resolved)?;
    let summary = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.mc.seed,
        "converged": converged,
        "results": results,
        "config": serde_json::to_value(cfg).map_err(|e| Error::param(e.to_string()))?,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::param(e.to_string()))?;
    w.write("summary.json", &(text + "\n"))?;
    Ok(RunReport {
        converged,
        summary,
        files: w.files,
    })
}

fn round_trip_experiment(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, Value)> {
    let scheme = cfg.scheme_config()?;
    let grid = cfg.time_grid()?;
    let rt = solve_round_trip_with(cfg, &scheme)?;
    w.log_run("main", &rt.solve);
    w.write("trajectories.csv", &round_trip_table(&rt))?;
    let mut results = run_summary("main", &rt);
    if cfg.experiment == ExperimentKind::ConvergenceReport {
        let report = match foc::check_convergence_conditions(&scheme, &grid) {
            Ok(r) => serde_json::to_value(r).unwrap_or(Value::Null),
            Err(e) => json!({ "unavailable": e.to_string() }),
        };
        results["conditions"] = report;
        results["e1_history"] = json!(rt.solve.e1_history);
    }
    Ok((rt.solve.converged, results))
}

fn mi_profile_experiment(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, Value)> {
    let grid = cfg.time_grid()?;
    let kernel = cfg.kernel()?;
    let f = cfg.resistance.function()?;
    let u = profile_rate(cfg, &grid, cfg.profile.rate);
    let dec = analysis::decompose_pmi_tmi(&u, cfg.profile.duration, &kernel, &f, &grid)?;
    let prof = analysis::market_impact(&u, &kernel, &f, &grid)?;
    let mut csv = String::from("t,u,r,mi,tmi\n");
    for i in 0..grid.nodes_len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            grid.node(i),
            u[i],
            prof.resistance[i],
            prof.mi[i],
            dec.tmi[i]
        );
    }
    w.write("trajectories.csv", &csv)?;
    let peak = prof.peak();
    let peak_time = prof.times[prof.mi.iter().position(|v| *v == peak).unwrap_or(0)];
    Ok((
        true,
        json!({
            "peak_mi": peak,
            "peak_time": peak_time,
            "pmi": dec.pmi,
            "tail_estimate": dec.tail,
            "tail_exponent": dec.tail_exponent,
        }),
    ))
}

fn gamma_scaling_experiment(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, Value)> {
    let grid = cfg.time_grid()?;
    let kernel = cfg.kernel()?;
    let f = cfg.resistance.function()?;
    // Unit volume: rate 1/duration over the execution window.
    let base = profile_rate(cfg, &grid, 1.0 / cfg.profile.duration);
    let s = &cfg.scaling;
    let gammas = analysis::log_space(s.gamma_min, s.gamma_max, s.points);
    let fit = analysis::gamma_scaling_fit(&base, &gammas, &kernel, &f, &grid)?;
    let top_lo = s.gamma_max / 10.0;
    let top: Vec<usize> = (0..gammas.len()).filter(|k| gammas[*k] >= top_lo * (1.0 - 1e-12)).collect();
    let top_fit = if top.len() >= 2 {
        let xs: Vec<f64> = top.iter().map(|k| gammas[*k]).collect();
        let ys: Vec<f64> = top.iter().map(|k| fit.peak_mi[*k]).collect();
        analysis::power_law_fit(&xs, &ys).ok()
    } else {
        None
    };
    let mut csv = String::from("gamma,peak_mi\n");
    for (g, m) in fit.gammas.iter().zip(&fit.peak_mi) {
        let _ = writeln!(csv, "{g},{m}");
    }
    w.write("scaling.csv", &csv)?;
    Ok((
        true,
        json!({
            "prefactor": fit.prefactor,
            "exponent": fit.exponent,
            "fit_residual": fit.residual,
            "top_decade_exponent": top_fit.map(|t| t.1),
            "gammas": fit.gammas,
            "peak_mi": fit.peak_mi,
        }),
    ))
}

fn linear_check_experiment(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, Value)> {
    // The direct solver is deterministic: the signal is taken with sigma = 0.
    let mut det = cfg.clone();
    det.signal.sigma = 0.0;
    det.scheme.mode = crate::config::ModeChoice::Deterministic;
    let a = cfg.resistance.a;
    let scheme = SchemeConfig {
        resistance: ResistanceFn::linear(a)?,
        ..det.scheme_config()?
    };
    let rt = solve_round_trip_with(&det, &scheme)?;
    w.log_run("iterative", &rt.solve);
    let mats = SchemeMatrices::new(&scheme, rt.alpha.grid())?;
    let direct = foc::solve_linear_direct(a, &scheme, &mats, &rt.alpha)?;
    let deviation = rt.solve.u.sub(&direct)?.l2_norm() / direct.l2_norm().max(f64::MIN_POSITIVE);
    let grid = *rt.alpha.grid();
    let table = trajectories_csv(&grid, &[("u_iterative", &rt.solve.u), ("u_direct", &direct)]);
    w.write("trajectories.csv", &table)?;
    let mut results = run_summary("iterative", &rt);
    results["linear_slope"] = json!(a);
    results["relative_l2_deviation"] = json!(deviation);
    Ok((rt.solve.converged, results))
}

fn sensitivity_experiment(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(bool, Value)> {
    let mut runs = Vec::new();
    let mut all = true;
    let mut settings: Vec<(String, ExperimentConfig)> = Vec::new();
    for nu in [0.5, 0.614, 0.7, 0.8, 0.9] {
        let mut c = cfg.clone();
        c.impact.nu = nu;
        settings.push((format!("nu_{nu}"), c));
    }
    for k in [0.5, 1.0, 1.5] {
        let mut c = cfg.clone();
        c.impact.kappa_inf = k;
        settings.push((format!("kappa_inf_{k}"), c));
    }
    for (tag, mut c) in settings {
        c.signal.sigma = 0.0;
        c.scheme.mode = crate::config::ModeChoice::Deterministic;
        let rt = solve_round_trip(&c)?;
        w.log_run(&tag, &rt.solve);
        w.write(&format!("trajectories_{tag}.csv"), &round_trip_table(&rt))?;
        all &= rt.solve.converged;
        runs.push(run_summary(&tag, &rt));
    }
    Ok((all, json!({ "runs": runs })))
}
