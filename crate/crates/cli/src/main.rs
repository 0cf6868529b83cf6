//! Runs the filters on a scenario and writes comparison outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use projfilter::harness::{run, write_outputs, FilterKind, RunConfig};
use projfilter::scenario::Scenario;

const EXIT_CONFIG: u8 = 2;
const EXIT_EARLY_FAILURE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "projfilter", version, about = "Compare projection filters against an exact grid filter")]
struct Args {
    /// Scenario JSON file.
    #[arg(long, value_name = "PATH", conflicts_with = "builtin", required_unless_present = "builtin")]
    scenario: Option<PathBuf>,

    /// Built-in scenario: linear, quadratic, cubic or general_cubic.
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,

    /// Comma-separated subset of l2nm, he, exact, ekf.
    #[arg(long, default_value = "l2nm,he,exact,ekf")]
    filters: String,

    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Normal-mixture components.
    #[arg(long, default_value_t = 2)]
    k: usize,

    /// Exponential family degree [default: the prior's degree].
    #[arg(long)]
    he_degree: Option<usize>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Comma-separated slice times [default: 10 uniform times].
    #[arg(long, value_delimiter = ',')]
    slices: Option<Vec<f64>>,

    /// Print the resolved scenario as JSON and exit.
    #[arg(long)]
    print_scenario: bool,
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };

    let scenario = match (&args.scenario, &args.builtin) {
        (Some(path), _) => Scenario::load(path),
        (None, Some(name)) => Scenario::builtin(name),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let mut scenario = match scenario {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if args.print_scenario {
        match scenario.to_json() {
            Ok(json) => {
                println!("{json}");
                return ExitCode::SUCCESS;
            }
            Err(e) => return config_error(e),
        }
    }
    let filters = match FilterKind::parse_list(&args.filters) {
        Ok(f) => f,
        Err(e) => return config_error(e),
    };

    let config = RunConfig {
        scenario,
        filters,
        k: args.k,
        he_degree: args.he_degree,
        slices: args.slices,
    };
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    if let Err(e) = write_outputs(&report, &args.out) {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::FAILURE;
    }
    for f in &report.filters {
        if let (Some(t), Some(why)) = (f.failed_at, &f.failure) {
            eprintln!("{} stopped at t = {t}: {why}", f.filter);
        }
    }
    if let Some(early) = &report.early_failure {
        eprintln!(
            "error: {} failed at t = {} (before {}% of the horizon)",
            early.filter,
            early.t,
            100.0 * projfilter::harness::EARLY_FAILURE_FRACTION
        );
        return ExitCode::from(EXIT_EARLY_FAILURE);
    }
    ExitCode::SUCCESS
}
