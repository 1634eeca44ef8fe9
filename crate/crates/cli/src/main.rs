//! `simulate <scenario> --config <path> [--out <dir>] [--workers N]`
//!
//! Exit status: 0 success, 2 config error, 3 infeasible schedule,
//! 4 numerical abort, 1 anything else (I/O).

mod config;
mod output;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spinmem::SimError;

use config::{Config, Scenario};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Infeasible(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Numerical(_) => 4,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible: {m}"),
            Failure::Numerical(m) => write!(f, "numerical abort: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let m = e.to_string();
        match e {
            SimError::InvalidParams(_) | SimError::InvalidGrid(_) => Failure::Config(m),
            SimError::Infeasible(_) | SimError::Overdamped { .. } | SimError::Unstable(_) => Failure::Infeasible(m),
            SimError::Integration { .. } | SimError::NotPsd { .. } | SimError::Degenerate(_) => Failure::Numerical(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "simulate", version, about = "Spin-ensemble quantum memory scans")]
struct Args {
    scenario: Scenario,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "SPINMEM_WORKERS")]
    workers: Option<usize>,
}

fn run(args: &Args) -> Result<Vec<PathBuf>, Failure> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let cfg = Config::parse(&text)?;
    cfg.check(args.scenario)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Io(e.to_string()))?;
    let outcome = pool.install(|| scenarios::run(&cfg, args.scenario))?;
    output::write(&args.out, &cfg, args.scenario, &outcome)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("simulate: {f}");
            ExitCode::from(f.code())
        }
    }
}
