//! `mirage`: run simulations and analyses, and serve the loopback services.

mod analyze;
mod config;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mirage_services::{client_session, SessionSpec};
use mirage_simnet::{RunReport, SimError};
use thiserror::Error;

use crate::config::ScenarioConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "mirage", version, about = "Address-hopping DDoS defense toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write CSV plus a JSON summary.
    Run {
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output path; the summary goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    #[command(subcommand)]
    Analyze(analyze::Analyze),
    #[command(subcommand)]
    Serve(serve::Serve),
    /// Run a client session against a live resolver.
    Client(serve::ClientArgs),
}

fn read_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ScenarioConfig::load(&text)
}

fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

pub fn execute(cfg: &ScenarioConfig, seed: u64) -> Result<RunReport, CliError> {
    match cfg.sim_run() {
        Some(run) => Ok(mirage_simnet::run(&run, seed)?),
        None => {
            let spec = SessionSpec {
                hop: cfg.hop.to_config()?,
                puzzle: cfg.puzzle,
                services: cfg.services.clone(),
                duration_s: cfg.duration_s,
            };
            Ok(client_session(&spec, seed)?)
        }
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = execute(&cfg, cfg.seed)?;
    let csv = out.unwrap_or_else(|| PathBuf::from(format!("{}-{}.csv", cfg.name(), cfg.seed)));
    std::fs::write(&csv, report.to_csv()).map_err(|e| io_err(&csv, e))?;
    let summary = serde_json::json!({
        "tool": "mirage",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": cfg.name(),
        "seed": cfg.seed,
        "records": report.records.len(),
        "summary": report.summary,
        "effective_config": cfg,
    });
    let path = summary_path(&csv);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    println!("wrote {} and {}", csv.display(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIRAGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Validate { config } => read_config(&config).map(|c| {
            println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
        }),
        Command::Analyze(a) => analyze::run(a),
        Command::Serve(s) => serve::run(s),
        Command::Client(c) => serve::client(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mirage: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
