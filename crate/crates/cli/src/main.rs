//! `survdro` command-line interface.

mod config;
mod evaluate;
mod experiment;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use survdro::metrics::{MetricsReport, OutcomeMode};
use survdro::{gradcheck, Error};

use crate::config::{ExperimentConfig, Method, ModelChoice};
use crate::experiment::Experiment;
use crate::format::fmt6;

#[derive(Parser)]
#[command(name = "survdro", version, about = "Distributionally robust survival models with fairness evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated train/validate/test experiment with hyperparameter tuning.
    Run(ExperimentArgs),
    /// Test metrics across a list of α values.
    SweepAlpha(ExperimentArgs),
    /// Metrics of a predictions CSV.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of every gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed` and `dro.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `dro.alpha` and the α grid; comma-separated for sweep-alpha.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV with `time`, `event`, `risk`, `x_*`, `s_<t>` and group columns.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value = "hazard")]
    outcome: Outcome,
    #[arg(long)]
    group: String,
    #[arg(long, value_delimiter = ',')]
    intersect: Vec<String>,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Directory for `metrics.csv`; stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Outcome {
    Hazard,
    Survival,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Training { .. } | Error::Numeric(_) | Error::NoEvents => 3,
        _ => 2,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn load(args: &ExperimentArgs) -> survdro::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.dro.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(a) = &args.alpha {
        if let Some(&first) = a.first() {
            cfg.dro.alpha = first;
        }
        cfg.train.alpha_grid = a.clone();
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    Ok(cfg)
}

fn print_report(m: &MetricsReport) {
    println!("{}", MetricsReport::COLUMNS.join(","));
    println!("{}", m.values().map(fmt6).join(","));
}

fn run(args: &ExperimentArgs, sweep: bool) -> ExitCode {
    let exp = match load(args).and_then(Experiment::load) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let result = if sweep {
        let alphas = exp.cfg.alpha_grid();
        experiment::sweep_alpha(&exp, &alphas)
    } else {
        experiment::run(&exp)
    };
    match result {
        Ok(0) => {
            println!("results written to {}", exp.cfg.out.display());
            ExitCode::SUCCESS
        }
        Ok(failed) => {
            eprintln!("{failed} run(s) failed; see {}", exp.cfg.out.display());
            ExitCode::from(3)
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => run(&a, false),
        Command::SweepAlpha(a) => run(&a, true),
        Command::Evaluate(a) => {
            let mode = match a.outcome {
                Outcome::Hazard => OutcomeMode::Hazard,
                Outcome::Survival => OutcomeMode::Survival,
            };
            let report = match evaluate::evaluate(&a.predictions, mode, &a.group, &a.intersect, a.gamma) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            if let Some(dir) = &a.out {
                let written = std::fs::create_dir_all(dir)
                    .map_err(Error::from)
                    .and_then(|_| experiment::write_metrics(&dir.join("metrics.csv"), &report));
                if let Err(e) = written {
                    return fail(e);
                }
            }
            print_report(&report);
            ExitCode::SUCCESS
        }
        Command::Gradcheck(a) => {
            let suites = match gradcheck::run_all(a.instances, a.seed) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let mut ok = true;
            println!("suite,instances,max_rel_error,status");
            for s in &suites {
                let pass = s.passed(gradcheck::GRADCHECK_TOL);
                ok &= pass;
                println!("{},{},{},{}", s.name, s.instances, fmt6(s.max_rel_error), if pass { "pass" } else { "FAIL" });
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
