//! Command-line front end for the `mrtrader` engine.

pub mod commands;
pub mod config;
pub mod output;
mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::commands::Context;
use crate::output::Sink;

/// Failure classes; each maps to one exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Rejected input or configuration (exit 1).
    Invalid(String),
    /// Solver or moment failure such as a blow-up (exit 2).
    Numerical {
        code: &'static str,
        message: String,
        tau: Option<f64>,
    },
    /// File system failure (exit 3).
    Io(String),
    /// `verify` ran but some binding check failed (exit 1).
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::ChecksFailed(_) => 1,
            CliError::Numerical { .. } => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Numerical { message, .. } => write!(f, "{message}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::ChecksFailed(n) => write!(f, "{n} verification checks failed"),
        }
    }
}

impl From<mrtrader::Error> for CliError {
    fn from(e: mrtrader::Error) -> Self {
        let message = format!("{}: {e}", e.name());
        if e.is_numerical() {
            let tau = match e {
                mrtrader::Error::BlowUpDetected { tau } | mrtrader::Error::TrigSingularity { tau } => Some(tau),
                _ => None,
            };
            CliError::Numerical {
                code: e.name(),
                message,
                tau,
            }
        } else {
            CliError::Invalid(message)
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mrtrader",
    version,
    about = "Optimal trading of correlated mean-reverting assets"
)]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all output files.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    pub plot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the model, preferences and estimate.
    Validate,
    /// Solve the value and feedback Riccati equations.
    Solve,
    /// Positions at a fixed state over time.
    Positions,
    /// Monte-Carlo wealth paths with moment comparisons.
    Simulate,
    /// Cost of misestimated reversion rates over a multiplier grid.
    Misspec,
    /// Value against one correlation, plus derivatives at the identity.
    CorrSweep,
    /// Position curves against risk aversion and value over (kappa2, rho).
    KappaSweep,
    /// Run the oracle and identity suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Positions => "positions",
            Command::Simulate => "simulate",
            Command::Misspec => "misspec",
            Command::CorrSweep => "corr-sweep",
            Command::KappaSweep => "kappa-sweep",
            Command::Verify => "verify",
        }
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    command: &'a str,
    code: &'a str,
    message: &'a str,
    tau: Option<f64>,
}

fn verify_command(cli: &Cli) -> Result<String, CliError> {
    let mut opts = mrtrader::verify::VerifyOptions::default();
    let mut hash = String::from("none");
    if let Some(path) = &cli.config {
        let cfg = config::read_config(path)?;
        opts.seed = cfg.seed;
        opts.mc_paths = cfg.verify.mc_paths;
        opts.monte_carlo = cfg.verify.monte_carlo;
        hash = config::load(path, cli.seed)?.hash();
    }
    if let Some(s) = cli.seed {
        opts.seed = s;
    }
    let sink = Sink::new(&cli.output_dir, "verify", hash, opts.seed)?;
    let (report, text) = commands::run_verify(&sink, opts)?;
    print!("{text}");
    match report.failures().count() {
        0 => Ok("all checks passed".into()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    if cli.command == Command::Verify {
        return verify_command(cli);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Invalid(format!("{} needs --config", cli.command.name())))?;
    let loaded = config::load(path, cli.seed)?;
    if cli.command == Command::Validate {
        return Ok(commands::validate(&loaded));
    }
    let sink = Sink::new(&cli.output_dir, cli.command.name(), loaded.hash(), loaded.config.seed)?;
    let ctx = Context {
        loaded,
        sink,
        plot: cli.plot,
    };
    let result = match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Positions => commands::positions(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Misspec => commands::misspec(&ctx),
        Command::CorrSweep => commands::corr_sweep(&ctx),
        Command::KappaSweep => commands::kappa_sweep(&ctx),
        Command::Validate | Command::Verify => unreachable!("handled above"),
    };
    if let Err(CliError::Numerical { code, message, tau }) = &result {
        let report = ErrorReport {
            command: cli.command.name(),
            code,
            message,
            tau: *tau,
        };
        ctx.sink.write_json("error.json", &report)?;
    }
    result
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
