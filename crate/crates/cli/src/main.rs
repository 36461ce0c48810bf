//! `dualsig` command-line front end.
//!
//! Every run logs its fully resolved configuration to standard error as one
//! JSON line. Exit codes: 0 success, 1 internal error, 2 usage or input error.

mod commands;
mod config;
mod data;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{BuildArgs, CalibrateArgs, DetectArgs, EvaluateArgs, SimulateArgs};
use config::{ParamFlags, Params, CONFIG_ENV};
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "dualsig", version, about = "Dual-channel identity detection of adversarial inputs")]
struct Cli {
    /// TOML file of parameter overrides
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker thread cap; defaults to all cores, results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Write seeded synthetic clean and attacked dumps plus a manifest
    Simulate(SimulateArgs),
    /// Build per-class identities from train and test dumps
    BuildIdentity(BuildArgs),
    /// Score clean samples and store the threshold in the identity file
    Calibrate(CalibrateArgs),
    /// Print the verdict for one sample as a JSON line
    Detect(DetectArgs),
    /// Score clean and adversarial dumps and write a report and verdict log
    Evaluate(EvaluateArgs),
}

impl Command {
    fn flags(&self) -> Option<&ParamFlags> {
        match self {
            Command::Simulate(_) => None,
            Command::BuildIdentity(a) => Some(&a.params),
            Command::Calibrate(a) => Some(&a.params),
            Command::Detect(a) => Some(&a.params),
            Command::Evaluate(a) => Some(&a.params),
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<&'a Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let params = cli
        .command
        .flags()
        .map(|f| Params::resolve(cli.config.as_deref(), f, cli.threads))
        .transpose()?;
    let threads = params.as_ref().map_or(cli.threads, |p| p.threads);
    let resolved = Resolved {
        command: &cli.command,
        params: params.as_ref(),
        // params already carry the thread cap
        threads: if params.is_some() { None } else { threads },
    };
    let line = serde_json::to_string(&resolved).map_err(|e| Failure::internal(e.to_string()))?;
    eprintln!("resolved config: {line}");

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::internal(e.to_string()))?;
    pool.install(|| match (&cli.command, &params) {
        (Command::Simulate(a), _) => commands::simulate(a),
        (Command::BuildIdentity(a), Some(p)) => commands::build_identity(a, p),
        (Command::Calibrate(a), Some(p)) => commands::calibrate_cmd(a, p),
        (Command::Detect(a), Some(p)) => commands::detect(a, p),
        (Command::Evaluate(a), Some(p)) => commands::evaluate_cmd(a, p),
        _ => Err(Failure::internal("parameters were not resolved")),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
