//! Command-line front end: loads a configuration file, applies flag
//! overrides, runs the experiment and reports the outcome through the exit
//! status.
//!
//! Exit status is 0 on success, 1 when a solver did not converge or the run
//! failed, and 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use optexec::config::{load_config, ExperimentKind};
use optexec::experiment::run_experiment;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "optexec", version, about = "Optimal execution experiments under transient impact with market resistance")]
struct Args {
    /// TOML configuration file; omitted keys take their documented defaults.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the experiment kind from the configuration.
    #[arg(long, value_name = "KIND", value_parser = parse_kind)]
    experiment: Option<ExperimentKind>,

    /// Override the Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (defaults to `output_dir` from the config, then `out/<kind>`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Do not print the run summary.
    #[arg(long)]
    quiet: bool,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    ExperimentKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown experiment '{s}', expected one of: {}", names.join(", "))
    })
}

/// Runs the tool with `argv` (including the program name) and returns the
/// process exit status.
pub fn cli_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    run(&args)
}

fn run(args: &Args) -> i32 {
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    if let Some(kind) = args.experiment {
        cfg.experiment = kind;
    }
    if let Some(seed) = args.seed {
        cfg.mc.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(cfg.experiment.name()));
    cfg.output_dir = Some(out.clone());

    match run_experiment(&cfg, &out) {
        Ok(report) => {
            if !args.quiet {
                match serde_json::to_string_pretty(&report.summary) {
                    Ok(s) => println!("{s}"),
                    Err(e) => eprintln!("error: could not render summary: {e}"),
                }
            }
            if report.converged {
                EXIT_OK
            } else {
                eprintln!("warning: solver did not reach its tolerance; artifacts written to {}", out.display());
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
