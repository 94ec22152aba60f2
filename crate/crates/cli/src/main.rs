//! `driftcir`: channel impulse responses of an absorbing sphere under drift.
//!
//! Exit codes: 0 success, 1 a validation or comparison failed, 2 bad
//! configuration or unwritable output, 3 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CirArgs, CompareArgs, McArgs, PeaksArgs, SweepArgs, ValidateArgs};

#[derive(Debug, Parser)]
#[command(name = "driftcir", version, about = "Drifted point-to-sphere channel impulse responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the analytic CIR on a time grid
    #[command(args_override_self = true)]
    Cir(CirArgs),
    /// Simulate absorption times by particle tracking
    #[command(args_override_self = true)]
    Mc(McArgs),
    /// Chi-square test of a simulated histogram against the analytic CIR
    #[command(args_override_self = true)]
    Compare(CompareArgs),
    /// Run the built-in accuracy checks
    #[command(args_override_self = true)]
    Validate(ValidateArgs),
    /// Peak metrics over drift speeds or receiver radii
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Peak time and height of one CIR
    #[command(args_override_self = true)]
    Peaks(PeaksArgs),
}

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Config(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Config(m) | Failure::Io(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<driftcir::Error> for Failure {
    fn from(e: driftcir::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn common(cmd: &Command) -> &config::CommonArgs {
    match cmd {
        Command::Cir(a) => &a.common,
        Command::Mc(a) => &a.common,
        Command::Compare(a) => &a.common,
        Command::Validate(a) => &a.common,
        Command::Sweep(a) => &a.common,
        Command::Peaks(a) => &a.common,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = common(&cli.command);
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&c.out)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", c.out.display())))?;
    match &cli.command {
        Command::Cir(a) => commands::cir(a),
        Command::Mc(a) => commands::mc(a),
        Command::Compare(a) => commands::compare(a),
        Command::Validate(a) => commands::validate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Peaks(a) => commands::peaks(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::splice_config_file(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {f}");
            return ExitCode::from(f.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
