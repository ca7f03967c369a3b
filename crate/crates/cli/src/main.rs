//! `mmixer`: generate synthetic data, train, evaluate, check gradients, run
//! ablation grids and collect metrics into plot-ready CSV.
//!
//! Exit codes: 0 success, 1 experiment or file failure, 2 usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmixer::experiments::Grid;
use mmixer::{AsoKind, CellKind, TemporalMode, TrainConfig};

#[derive(Parser)]
#[command(name = "mmixer", version, about = "Multi-modal mixer network driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic factorized multi-modal dataset.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or an untrained model, on a dataset split.
    Eval(EvalArgs),
    /// Compare reverse-mode gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Run an ablation grid on one shared dataset.
    Ablate(AblateArgs),
    /// Collect metrics files into plot-ready CSV tables.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON task spec; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Factor values per modality.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub modalities: Option<usize>,
    /// Sequence length.
    #[arg(long)]
    pub t: Option<usize>,
    /// Feature width.
    #[arg(long)]
    pub df: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub mode: Option<TemporalMode>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub aso: Option<AsoKind>,
    #[arg(long)]
    pub dh: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub aux_epochs: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory holding `train.mmix` and `test.mmix`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train per-modality probes on the frozen backbone afterwards.
    #[arg(long)]
    pub aux: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint; without it a freshly initialized model is scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    pub split: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Restrict to one cell; all cells by default.
    #[arg(long)]
    pub cell: Option<CellKind>,
    /// Restrict to one summarizer; all by default.
    #[arg(long)]
    pub aso: Option<AsoKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub grid: Grid,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds to repeat every row over; defaults to the single run seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metrics JSON files or run directories containing `metrics.json`.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

impl ModelArgs {
    /// Default, then config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read(path)
                    .map_err(|e| Failure::Run(anyhow::anyhow!("{}: {e}", path.display())))?;
                serde_json::from_slice(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.cell {
            c.cell_kind = v;
        }
        if let Some(v) = self.aso {
            c.aso_kind = v;
        }
        if let Some(v) = self.dh {
            c.d_h = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.batch {
            c.batch_size = v;
        }
        if let Some(v) = self.aux_epochs {
            c.aux_epochs = v;
        }
        c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or settings; exit code 2.
    Usage(String),
    /// Missing files, numeric failures, failed checks; exit code 1.
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<mmixer::Error> for Failure {
    fn from(e: mmixer::Error) -> Self {
        Failure::Run(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn from_env() -> Result<Self, Failure> {
        match std::env::var("MMIXER_PRECISION") {
            Err(_) => Ok(Precision::F32),
            Ok(v) => match v.as_str() {
                "" | "f32" => Ok(Precision::F32),
                "f64" => Ok(Precision::F64),
                other => Err(Failure::Usage(format!(
                    "MMIXER_PRECISION must be f32 or f64, got {other:?}"
                ))),
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
