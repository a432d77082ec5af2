//! Experiment runner artifacts.

use std::fs;

use optexec::config::{load_config, ExperimentConfig, ExperimentKind, ResistanceVariant};
use optexec::experiment::run_experiment;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

#[test]
fn mi_profile_reports_peak_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "experiment = \"mi_profile\"\n[grid]\nhorizon = 3.0\nsteps = 300\n[impact]\nnu = 0.5\nlambda = 1.0\n",
    );
    let rep = run_experiment(&cfg, dir.path()).unwrap();
    assert!(rep.converged);
    let res = &rep.summary["results"];
    assert!((res["peak_time"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let pmi = res["pmi"].as_f64().unwrap();
    assert!(pmi > 0.0 && pmi < 0.3);
    let csv = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("t,u,r,mi,tmi\n"));
    assert_eq!(csv.lines().count(), 302);
    assert!(!dir.path().join("convergence.log").exists());
}

// Coarse grids cannot resolve the resistance of the largest orders, so this
// runs at the same resolution as the scaling study itself.
#[test]
fn gamma_scaling_writes_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "experiment = \"gamma_scaling\"\n[grid]\nhorizon = 2.0\nsteps = 2000\n[impact]\nnu = 0.5\nlambda = 1.0\n[scaling]\npoints = 5\n",
    );
    let rep = run_experiment(&cfg, dir.path()).unwrap();
    let res = &rep.summary["results"];
    let exponent = res["exponent"].as_f64().unwrap();
    assert!(exponent > 0.5 && exponent < 0.7, "{exponent}");
    assert!(res["top_decade_exponent"].as_f64().is_some());
    let csv = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn sensitivity_sweep_writes_one_file_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = \"sensitivity_sweep\"\n[scheme]\nmax_outer = 400\n");
    let rep = run_experiment(&cfg, dir.path()).unwrap();
    assert!(rep.converged);
    for tag in ["nu_0.5", "nu_0.614", "nu_0.7", "nu_0.8", "nu_0.9", "kappa_inf_0.5", "kappa_inf_1", "kappa_inf_1.5"] {
        assert!(dir.path().join(format!("trajectories_{tag}.csv")).exists(), "{tag}");
    }
    let log = fs::read_to_string(dir.path().join("convergence.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("nu_0.9 ")));
}

#[test]
fn resolved_config_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("experiment = \"linear_check\"\n[grid]\nsteps = 30\n[resistance]\nvariant = \"linear\"\na = 0.25\n");
    cfg.mc.seed = 1234;
    run_experiment(&cfg, dir.path()).unwrap();
    let back = load_config(&dir.path().join("resolved_config.toml")).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.experiment, ExperimentKind::LinearCheck);
    assert_eq!(back.resistance.variant, ResistanceVariant::Linear);
}

#[test]
fn round_trip_costs_stay_non_negative_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[signal]\nsigma = 0.0\n");
    let rep = run_experiment(&cfg, dir.path()).unwrap();
    assert!(rep.converged);
    let min_cost = rep.summary["results"]["min_running_cost"].as_f64().unwrap();
    assert!(min_cost >= -1e-10, "{min_cost}");
}
