//! `finspect`: command-line front end for the inspection toolkit.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "finspect", version, about = "Inspect learned features for batch effects and overfitting")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FI_THREADS")]
    pub threads: Option<usize>,
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with optional site effects.
    Gen(commands::GenArgs),
    /// Assign samples to train/validation/test.
    Split(commands::SplitArgs),
    /// Keep the top-k categories of a column, balanced.
    Balance(commands::BalanceArgs),
    /// Embed features in two dimensions.
    Umap(commands::UmapArgs),
    /// Train linear probes on label columns.
    Probe(commands::ProbeArgs),
    /// Run a full plan and write a report site.
    Report(commands::ReportArgs),
    /// Check a feature file or a report.
    Validate(commands::ValidateArgs),
}

/// Misuse of the command line, as opposed to bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<finspect::Error>() {
        Some(finspect::Error::InvalidArgument(_)) | Some(finspect::Error::UnknownColumn(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let threads = if cli.global.deterministic { Some(1) } else { cli.global.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
