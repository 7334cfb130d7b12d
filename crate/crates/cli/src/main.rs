//! `mrsle` command line: run configured experiments, audit the deterministic
//! bounds, trace single trajectories.

mod audit;
mod config;
mod experiments;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit 2.
    Config(String),
    /// A checked property failed; exit 1.
    Assertion(String),
    /// Numerical abort; exit 3.
    Numerical { message: String, dump: Option<PathBuf> },
    /// Output could not be written; exit 3.
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical { .. } | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Assertion(m) => write!(f, "check failed: {m}"),
            CliError::Numerical { message, dump: Some(p) } => write!(f, "numerical abort: {message} (diagnostics in {})", p.display()),
            CliError::Numerical { message, dump: None } => write!(f, "numerical abort: {message}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<mrsle_core::Error> for CliError {
    fn from(e: mrsle_core::Error) -> Self {
        match e {
            mrsle_core::Error::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Numerical { message: other.to_string(), dump: None },
        }
    }
}

#[derive(Parser)]
#[command(name = "mrsle", version, about = "Multiradial SLE numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML file.
    Run {
        config: PathBuf,
        /// Results directory; overrides `out` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every deterministic bound on a canned trajectory battery.
    Audit {
        /// Add this to every traced capacity (negative control).
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_sigma: f64,
    },
    /// Trace one trajectory and write curve, driver and time change.
    Trace {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        kappa: f64,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, out } => experiments::run_file(&config, out),
        Cmd::Audit { perturb_sigma } => audit::audit(perturb_sigma),
        Cmd::Trace { n, kappa, horizon, dt, seed, out } => experiments::trace_cmd(n, kappa, horizon, dt, seed, &out),
    };
    match res {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mrsle: {e}");
            ExitCode::from(e.code())
        }
    }
}
