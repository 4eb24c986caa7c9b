//! `dualsup` command-line driver.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualsup::error::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: dualsup::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { source, .. } => match source.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for dualsup::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

impl<T> StageExt<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "dualsup", version, about = "Two-phase self-supervised training with ensemble fuzzy pseudo-labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical dataset file.
    GenerateData(GenerateArgs),
    /// Phase 1, pseudo-labelling, phase 2 and probes; writes checkpoints and traces.
    Run(ConfigArgs),
    /// Label a dataset with an ensemble of block checkpoints.
    Pseudolabel(PseudolabelArgs),
    /// Linear and kNN probes of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Sweep one protocol axis and tabulate probe accuracy against the phase-1 encoder.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    supers: usize,
    #[arg(long, default_value_t = 2)]
    classes_per_super: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    /// Distance of class centers from their superclass center (default: separation / 2).
    #[arg(long)]
    class_separation: Option<f64>,
}

/// Config file plus overrides; flags win over file values.
#[derive(Debug, Clone, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    #[arg(long)]
    phase2_full_epochs: Option<usize>,
    #[arg(long)]
    label_mode: Option<String>,
    #[arg(long)]
    freeze_boundary: Option<usize>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct PseudolabelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Block checkpoints, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    blocks: Vec<PathBuf>,
    #[arg(long, default_value = "fuzzy")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 100)]
    probe_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    probe_lr: f64,
    #[arg(long, default_value_t = 10)]
    knn: usize,
    /// Append the results as `eval` records to this metrics file.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// ensemble-size, label-mode, progressive or freeze.
    #[arg(long)]
    axis: String,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => commands::generate_data(&a),
        Command::Run(a) => commands::run(&a),
        Command::Pseudolabel(a) => commands::pseudolabel(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
