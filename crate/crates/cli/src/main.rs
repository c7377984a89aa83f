mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use potgap::GapError;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "potgap", version, about = "Potential output and output gap from a non-stationary dynamic factor model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw data table and metadata, apply transforms and write the quarterly panel.
    Ingest(commands::IngestArgs),
    /// Simulate a panel and its ground truth from a DGP specification.
    Simulate(commands::SimulateArgs),
    /// Estimate the factor model, Covid adjustment and common trend.
    Estimate(commands::EstimateArgs),
    /// Decompose a series into secular, trend, cycle, Covid and idiosyncratic parts.
    Decompose(commands::DecomposeArgs),
    /// Bootstrap confidence bands for the output gap and potential output.
    Bands(commands::BandsArgs),
    /// Generalized impulse responses to a shock in one series.
    Girf(commands::GirfArgs),
    /// Conditional forecast along a deviation path of one series.
    Scenario(commands::ScenarioArgs),
    /// Univariate trend-cycle filters.
    Filter(commands::FilterArgs),
    /// ADL inflation forecasts with alternative gaps and Diebold-Mariano tests.
    Forecast(commands::ForecastArgs),
    /// Quasi-real-time expanding-window gap estimates.
    Qrt(commands::QrtArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Gap(#[from] GapError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Gap(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Output directory shared by every subcommand.
#[derive(Args, Clone)]
pub struct OutArgs {
    /// Output directory (overrides `out` in the config file).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Record of a run written as `manifest.json` in the output directory.
pub struct Manifest {
    pub command: &'static str,
    pub out: PathBuf,
    pub params: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
    pub results: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, out: PathBuf) -> Self {
        Manifest {
            command,
            out,
            params: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }

    pub fn result(&mut self, key: &str, value: Value) {
        self.results.insert(key.to_string(), value);
    }

    /// Writes `text` into the output directory and records the file.
    pub fn write(&mut self, name: &str, text: &str) -> CliResult<()> {
        potgap::io::write_text(&self.out.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, status: &Result<(), String>) -> std::io::Result<()> {
        let body = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "status": match status { Ok(()) => "ok".to_string(), Err(e) => format!("error: {e}") },
            "params": self.params,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "results": self.results,
        });
        std::fs::create_dir_all(&self.out)?;
        let text = serde_json::to_string_pretty(&body).map_err(std::io::Error::other)?;
        std::fs::write(self.out.join("manifest.json"), text + "\n")
    }
}

fn run(command: Command) -> (Option<Manifest>, CliResult<()>) {
    let setup = match command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Bands(a) => commands::bands(a),
        Command::Girf(a) => commands::girf(a),
        Command::Scenario(a) => commands::scenario(a),
        Command::Filter(a) => commands::filter(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Qrt(a) => commands::qrt(a),
    };
    match setup {
        Ok(job) => {
            let mut m = job.manifest;
            let r = (job.run)(&mut m);
            (Some(m), r)
        }
        Err(e) => (None, Err(e)),
    }
}

/// A resolved command: its manifest and the work writing into it.
pub struct Job {
    pub manifest: Manifest,
    pub run: Box<dyn FnOnce(&mut Manifest) -> CliResult<()>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (manifest, result) = run(cli.command);
    let status = result.as_ref().map(|_| ()).map_err(|e| e.to_string());
    if let Some(m) = &manifest {
        if let Err(e) = m.finish(&status) {
            eprintln!("error: cannot write manifest in {}: {e}", display(&m.out));
            return ExitCode::from(1);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = manifest.as_ref().map_or("setup", |m| m.command);
            eprintln!("error [{stage}]: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
