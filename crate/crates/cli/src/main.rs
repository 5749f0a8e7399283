use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapley_gla::acceptance::run_acceptance;
use shapley_gla::experiment::{
    run_custom, run_exact, run_experiment, write_outputs, ExperimentConfig, ExperimentKind, Method, ResultTable,
    Threads,
};
use shapley_gla::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_ACCEPTANCE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "shapley-gla", version, about = "Shapley effects via Gaussian-linear approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form effects of a linear model under a Gaussian input.
    Exact(Common),
    /// Effects of the Taylor, finite-difference and regression surrogates of a model.
    Linearize(Common),
    /// Nonlinear four-variable model with shrinking inputs.
    Fig1(Common),
    /// `x₁ + x₂²` with `N(0, I/a)` inputs: analytic and linearized effects.
    Remark1(Common),
    /// Empirical-mean inputs: Gaussian-linear vs nearest-neighbour estimates.
    Empirical42(Common),
    /// Run the acceptance criteria and report pass/fail.
    Acceptance(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, or "auto".
    #[arg(long)]
    threads: Option<Threads>,
    /// Output CSV (a `.config.json` sidecar is written next to it); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Multiplier on the permutation estimator budgets.
    #[arg(long)]
    budget_scale: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(threads) = self.threads {
            config.threads = threads;
        }
        if let Some(scale) = self.budget_scale {
            config.budget_scale = scale;
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        Ok(config)
    }
}

fn emit(table: &ResultTable, config: &ExperimentConfig) -> Result<(), Error> {
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    match &config.output {
        Some(path) => write_outputs(table, config, path),
        None => table.write_csv(std::io::stdout().lock()),
    }
}

fn run(command: Command) -> Result<u8, Error> {
    let (common, kind) = match &command {
        Command::Exact(c) | Command::Linearize(c) | Command::Acceptance(c) => (c, ExperimentKind::Custom),
        Command::Fig1(c) => (c, ExperimentKind::Fig1),
        Command::Remark1(c) => (c, ExperimentKind::Remark1),
        Command::Empirical42(c) => (c, ExperimentKind::Empirical42),
    };
    let mut config = common.load()?;
    match command {
        Command::Acceptance(_) => {
            let report = run_acceptance(&config)?;
            for c in &report.criteria {
                eprintln!("{}", c.line());
            }
            match &config.output {
                Some(path) => std::fs::write(path, report.to_json() + "\n")?,
                None => println!("{}", report.to_json()),
            }
            return Ok(if report.passed { 0 } else { EXIT_ACCEPTANCE });
        }
        Command::Exact(_) => {
            let config = config.resolve(kind)?;
            emit(&run_exact(&config)?, &config)?;
        }
        Command::Linearize(_) => {
            config.methods.get_or_insert_with(|| vec![Method::Taylor, Method::FiniteDiff, Method::Regression]);
            let config = config.resolve(kind)?;
            emit(&run_custom(&config)?, &config)?;
        }
        _ => {
            let config = config.resolve(kind)?;
            emit(&run_experiment(&config)?, &config)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}
