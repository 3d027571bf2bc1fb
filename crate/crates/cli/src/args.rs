use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "interpole", version, about = "Interpretable policy learning from offline demonstrations")]
pub struct Cli {
    /// Worker threads for per-trajectory parallelism (outputs do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate demonstrations and ground truth from a reference environment.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Score a model against a dataset (and ground truth, if available).
    Evaluate(EvaluateArgs),
    /// Flag belated diagnoses and uninformative tests.
    Audit(AuditArgs),
    /// Write belief-simplex coordinates, boundaries and means as CSV.
    ExportPlot(ExportPlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Environment name (diag, bias, adni-like, tree) or a JSON environment file.
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "INTERPOLE_SEED")]
    pub seed: Option<u64>,
    /// Dataset output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth output [default: <out>.truth.jsonl].
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Behaviour-generating model output [default: <out>.model.json].
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Joint,
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Closed-form EM on the dynamics, means at action centroids.
    Warm,
    /// Seeded Dirichlet rows and near-uniform means.
    Random,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model output.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit report output [default: <out>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON settings file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Blocks held fixed, e.g. `T,eta` (T, O, b1, eta, mu).
    #[arg(long)]
    pub freeze: Option<String>,
    /// Model file supplying the values of frozen blocks.
    #[arg(long)]
    pub known: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, env = "INTERPOLE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth file; without it belief and policy mismatch are omitted.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Additional one-row CSV summary.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Relabel model states to best match the ground truth before scoring.
    #[arg(long)]
    pub align_states: bool,
    /// Action treated as the positive class for action matching.
    #[arg(long)]
    pub positive_action: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Cohort table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Posterior confidence that counts as certainty.
    #[arg(long, default_value_t = 0.9)]
    pub confidence: f64,
    /// Fraction of a standard deviation below the mean factual change.
    #[arg(long, default_value_t = 0.5)]
    pub informativeness: f64,
    #[arg(long)]
    pub test_action: Option<usize>,
    /// Cohort predicate `key=value`; repeatable.
    #[arg(long)]
    pub cohort: Vec<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}
