//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use optexec::analysis::{self, eval_gradient, pnl_of};
use optexec::config::ExperimentConfig;
use optexec::experiment::{solve_round_trip, solve_round_trip_with};
use optexec::foc::{
    check_convergence_conditions, iterate_scheme_with, solve_linear_direct, AdjointMode, SchemeConfig, SchemeMatrices,
};
use optexec::kernels::{build_nystrom, kernel_l2_constant, KernelSpec, TimeGrid};
use optexec::resistance::{solve_resistance, ResistanceOptions};
use optexec::signals::{alpha_closed_form, simulate_mu, OUParams};
use optexec::volterra::{inner_product, Pathwise};
use optexec::{PathSet, ResistanceFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn deterministic_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.signal.sigma = 0.0;
    cfg
}

fn deterministic_alpha(grid: &TimeGrid, ou: &OUParams) -> PathSet {
    let mu = simulate_mu(ou, grid, 1, 0).unwrap();
    alpha_closed_form(ou, &mu).unwrap()
}

/// Random smooth path: a few low-frequency sine modes plus a constant.
fn smooth_path(rng: &mut ChaCha8Rng, grid: &TimeGrid, scale: f64) -> PathSet {
    let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t_max = grid.horizon();
    PathSet::from_fn(*grid, 1, |_, i| {
        let t = grid.node(i) / t_max;
        let mut v = coeffs[0];
        for (k, c) in coeffs[1..].iter().enumerate() {
            v += c * ((k + 1) as f64 * std::f64::consts::PI * t).sin();
        }
        scale * v
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = deterministic_config();
    let grid = cfg.time_grid().unwrap();
    let scheme = SchemeConfig {
        resistance: ResistanceFn::linear(0.5).unwrap(),
        eps1: 1e-26,
        max_outer: 500,
        ..cfg.scheme_config().unwrap()
    };
    let alpha = deterministic_alpha(&grid, &cfg.ou_params().unwrap());
    let mats = SchemeMatrices::new(&scheme, &grid).unwrap();
    let res = iterate_scheme_with(&scheme, &mats, &alpha, &Pathwise).unwrap();
    let direct = solve_linear_direct(0.5, &scheme, &mats, &alpha).unwrap();
    let rel = res.u.sub(&direct).unwrap().l2_norm() / direct.l2_norm();
    let secs = start.elapsed().as_secs_f64();
    (
        rel <= 1e-8 && secs <= 10.0,
        format!("relative L2 deviation {rel:.3e} (<= 1e-8), {} iterations, {secs:.2} s (<= 10 s)", res.outer_iterations),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = deterministic_config();
    let scheme = SchemeConfig {
        // Run the full 100 iterations.
        eps1: f64::MIN_POSITIVE,
        max_outer: 100,
        ..cfg.scheme_config().unwrap()
    };
    let rt = solve_round_trip_with(&cfg, &scheme).unwrap();
    let (e1, e2, ebf) = (rt.solve.final_e1(), rt.solve.final_e2(), rt.solve.final_ebf());
    let secs = start.elapsed().as_secs_f64();
    (
        rt.solve.outer_iterations == 100 && e1 <= 1e-11 && e2 <= 1e-16 && ebf <= 1e-31 && secs <= 60.0,
        format!("after {} iterations E1 {e1:.3e} (<= 1e-11), E2 {e2:.3e} (<= 1e-16), Ebf {ebf:.3e} (<= 1e-31), {secs:.2} s", rt.solve.outer_iterations),
    )
}

fn unit_profile(grid: &TimeGrid) -> Vec<f64> {
    grid.nodes().iter().map(|t| if *t < 1.0 { 1.0 } else { 0.0 }).collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::new(2.0, 2000).unwrap();
    let kernel = KernelSpec::new(1.0, 1.0, 0.5).unwrap();
    let f = ResistanceFn::power(2.0).unwrap();
    let gammas = analysis::log_space(1.0, 100.0, 9);
    let fit = analysis::gamma_scaling_fit(&unit_profile(&grid), &gammas, &kernel, &f, &grid).unwrap();
    let top = &gammas[4..];
    let top_mi = &fit.peak_mi[4..];
    let (_, top_exp, _) = analysis::power_law_fit(top, top_mi).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok_a = (fit.exponent - 0.6086).abs() <= 0.05;
    let ok_b = (top_exp - 0.5).abs() <= 0.08;
    (
        ok_a && ok_b && secs <= 60.0,
        format!(
            "exponent on [1, 100] {:.4} (0.6086 +- 0.05: {}), prefactor {:.4}, top decade {top_exp:.4} (0.5 +- 0.08: {}), {secs:.2} s",
            fit.exponent,
            if ok_a { "ok" } else { "out of band" },
            fit.prefactor,
            if ok_b { "ok" } else { "out of band" },
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut cfg = deterministic_config();
    cfg.grid.horizon = 0.25;
    let grid = cfg.time_grid().unwrap();
    let scheme = SchemeConfig {
        gamma: 2.0,
        resistance: ResistanceFn::linear(0.1).unwrap(),
        eps1: 1e-28,
        max_outer: 200,
        record_iterates: true,
        ..cfg.scheme_config().unwrap()
    };
    let report = check_convergence_conditions(&scheme, &grid).unwrap();
    let alpha = deterministic_alpha(&grid, &cfg.ou_params().unwrap());
    let mats = SchemeMatrices::new(&scheme, &grid).unwrap();
    let res = iterate_scheme_with(&scheme, &mats, &alpha, &Pathwise).unwrap();
    let hat = res.iterates.last().unwrap().clone();
    let norm_hat = hat.l2_norm();
    let rate = report.predicted_rate;
    let mut worst: f64 = 0.0;
    let mut ok = report.cond1 && report.cond2;
    for (k, it) in res.iterates.iter().enumerate() {
        let n = (k + 1) as i32;
        let lhs = it.sub(&hat).unwrap().l2_norm();
        let rhs = 1.1 * rate.powi(n) * norm_hat;
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
        ok &= lhs <= rhs;
    }
    (
        ok,
        format!(
            "cond1 {} cond2 {}, C~ {:.4}, rate C~/gamma {rate:.4}, worst |u^n - u^|/(1.1 rate^n |u^|) {worst:.4} over {} iterates",
            report.cond1,
            report.cond2,
            report.c_tilde,
            res.iterates.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = deterministic_config();
    let grid = cfg.time_grid().unwrap();
    let scheme = SchemeConfig {
        adjoint: AdjointMode::Transposed,
        ..cfg.scheme_config().unwrap()
    };
    let mats = SchemeMatrices::new(&scheme, &grid).unwrap();
    let alpha = deterministic_alpha(&grid, &cfg.ou_params().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let u = smooth_path(&mut rng, &grid, 3.0);
        let h = smooth_path(&mut rng, &grid, 1.0);
        let g = eval_gradient(&u, &alpha, &scheme, &mats, &Pathwise).unwrap();
        let analytic = inner_product(&g, &h).unwrap();
        let best = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|eps| {
                let up = u.axpby(1.0, &h, *eps).unwrap();
                let um = u.axpby(1.0, &h, -*eps).unwrap();
                let fd = (pnl_of(&up, &alpha, &scheme, &mats).unwrap() - pnl_of(&um, &alpha, &scheme, &mats).unwrap())
                    / (2.0 * eps);
                (fd - analytic).abs() / fd.abs().max(analytic.abs())
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    (worst <= 1e-4, format!("worst relative gradient error over 10 pairs {worst:.3e} (<= 1e-4)"))
}

fn criterion_6() -> Outcome {
    let kernel = KernelSpec::new(0.0, 0.467, 0.614).unwrap();
    let mut mins = Vec::new();
    for n in [50, 100, 200] {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let mats = build_nystrom(&kernel, &grid).unwrap();
        mins.push(mats.symmetrized_form().min_symmetric_eigenvalue());
    }
    (
        mins.iter().all(|m| *m >= -1e-10),
        format!("minimum eigenvalues at N = 50, 100, 200: {:.3e}, {:.3e}, {:.3e} (>= -1e-10)", mins[0], mins[1], mins[2]),
    )
}

fn criterion_7() -> Outcome {
    let grid = TimeGrid::new(1.0, 200).unwrap();
    let kernel = KernelSpec::new(1.0, 0.467, 0.614).unwrap();
    let f = ResistanceFn::huberized(2.0, 0.25).unwrap();
    let q = f.lipschitz() * kernel_l2_constant(&kernel.transient(), 1.0).unwrap().sqrt();
    let bound = q / (1.0 - q);
    let lg = build_nystrom(&kernel.transient(), &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u1 = smooth_path(&mut rng, &grid, 2.0);
        let u2 = smooth_path(&mut rng, &grid, 2.0);
        let opts = ResistanceOptions::default();
        let r1 = solve_resistance(&u1, &lg, &f, &opts, None).unwrap().r;
        let r2 = solve_resistance(&u2, &lg, &f, &opts, None).unwrap().r;
        let ratio = r1.sub(&r2).unwrap().l2_norm() / u1.sub(&u2).unwrap().l2_norm();
        worst = worst.max(ratio);
    }
    (
        q <= 0.5 && worst <= 1.05 * bound,
        format!("L sqrt(T C_G) = {q:.4} (<= 0.5), worst ratio {worst:.4} vs 1.05 x bound {:.4}", 1.05 * bound),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let rt = solve_round_trip(&cfg).unwrap();
    let min_cost = rt.cost.values().iter().copied().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    (
        min_cost >= -1e-10,
        format!(
            "M = {}, min running cost {min_cost:.3e} (>= -1e-10); E1 {:.3e} after {} iterations, {secs:.1} s",
            rt.solve.u.num_paths(),
            rt.solve.final_e1(),
            rt.solve.outer_iterations
        ),
    )
}

fn peak_rate(edit: impl FnOnce(&mut ExperimentConfig)) -> f64 {
    let mut cfg = deterministic_config();
    cfg.scheme.max_outer = 500;
    edit(&mut cfg);
    let rt = solve_round_trip(&cfg).unwrap();
    assert!(rt.solve.converged, "ordering run did not converge (E1 {:.3e})", rt.solve.final_e1());
    rt.peak_abs_rate()
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn criterion_9() -> Outcome {
    let by_kappa: Vec<f64> = [10.0, 1.0, 0.1].iter().map(|k| peak_rate(|c| c.signal.kappa = *k)).collect();
    let mut by_c: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|v| peak_rate(|c| c.resistance.c = *v)).collect();
    by_c.push(peak_rate(|c| c.resistance.variant = optexec::config::ResistanceVariant::Zero));
    let by_nu: Vec<f64> = [0.5, 0.614, 0.7, 0.8, 0.9].iter().map(|v| peak_rate(|c| c.impact.nu = *v)).collect();
    let by_kinf: Vec<f64> = [1.5, 1.0, 0.5].iter().map(|v| peak_rate(|c| c.impact.kappa_inf = *v)).collect();
    let checks = [increasing(&by_kappa), increasing(&by_c), increasing(&by_nu), increasing(&by_kinf)];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" < ");
    (
        checks.iter().all(|c| *c),
        format!(
            "kappa 10,1,0.1: {} [{}]; c 1..4 then none: {} [{}]; nu 0.5..0.9: {} [{}]; kappa_inf 1.5,1,0.5: {} [{}]",
            fmt(&by_kappa),
            checks[0],
            fmt(&by_c),
            checks[1],
            fmt(&by_nu),
            checks[2],
            fmt(&by_kinf),
            checks[3]
        ),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.mc.paths = 500;
    cfg.grid.steps = 50;
    cfg.scheme.eps1 = 1e-3;
    cfg.scheme.max_outer = 50;
    let rt = solve_round_trip(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let e1 = rt.solve.final_e1();
    (
        rt.solve.converged && e1 <= 1e-3 && rt.max_normal_residual <= 1e-8 && secs <= 300.0,
        format!(
            "E1 {e1:.3e} (<= 1e-3) after {} iterations (<= 50), max normal-equation residual {:.3e} (<= 1e-8), {secs:.1} s",
            rt.solve.outer_iterations, rt.max_normal_residual
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("linear oracle equivalence", criterion_1),
        ("convergence thresholds", criterion_2),
        ("square-root law fit", criterion_3),
        ("rate bound", criterion_4),
        ("gradient check", criterion_5),
        ("positive semi-definite kernel", criterion_6),
        ("resistance contraction", criterion_7),
        ("non-negative running cost", criterion_8),
        ("qualitative orderings", criterion_9),
        ("stochastic pipeline smoke", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(out) => out,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!("criterion {id:>2} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
