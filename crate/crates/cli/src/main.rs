mod args;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use config::FileConfig;

/// Exit status for a run that failed on its inputs.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for a failure of the numerical linear algebra.
const EXIT_NUMERICAL: u8 = 3;
/// Exit status for an unusable command line (BSD `EX_USAGE`).
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Io(PathBuf, std::io::Error),
    Core(stix_core::Error),
}

impl From<stix_core::Error> for Failure {
    fn from(e: stix_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(msg) => f.write_str(msg),
            Failure::Io(path, e) => write!(f, "{}: {e}", path.display()),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("stix: error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path, cli.command.name())?,
        None => FileConfig::default(),
    };
    let workers = match cli.workers.or(file.workers) {
        Some(0) => return Err(Failure::Validation("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::Validation(format!("cannot start {workers} workers: {e}")))?;
    commands::dispatch(&cli.command, &file, workers)
}
