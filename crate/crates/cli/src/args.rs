use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "lts", version, about = "Latent Gaussian tree sign-ambiguity and synthesis experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with default values for any of these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (positive); every random stream derives from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo samples per estimate.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Grid step for the pi sweep.
    #[arg(long, global = true)]
    pub grid: Option<f64>,
    /// Gaussian codebook rate, one value or one per layer (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub ry: Option<Vec<f64>>,
    /// Sign codebook rate, one value or one per layer (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub rb: Option<Vec<f64>>,
    /// `0.5` for every hidden node, or `y1=0.5,y2=0.9`.
    #[arg(long, global = true)]
    pub pi: Option<String>,
    /// Block length N.
    #[arg(long, global = true)]
    pub blocklen: Option<usize>,
    /// Units for rates and information values
    #[arg(long, global = true, value_enum)]
    pub units: Option<Units>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so reports are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MiMethod {
    Closed,
    Direct,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Shared,
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Signs {
    #[default]
    Random,
    Constant,
}

#[derive(Debug, Clone, Args)]
pub struct TreeArg {
    /// Tree file.
    pub tree: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Codebooks averaged in the KL estimate.
    #[arg(long, default_value_t = 1)]
    pub codebooks: usize,
    /// Fresh-codebook runs for the independence statistics (default: --samples).
    #[arg(long)]
    pub audit_runs: Option<usize>,
    /// Samples for the rate-region margins; 0 skips them.
    #[arg(long, default_value_t = 20_000)]
    pub bound_samples: usize,
    #[arg(long, value_enum, default_value_t = Signs::Random)]
    pub signs: Signs,
    /// Seed of the codebook (default: --seed).
    #[arg(long)]
    pub codebook_seed: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check a tree file and summarize it.
    Validate(TreeArg),
    /// Joint and observed covariances, determinants and recovered magnitudes.
    Covariance(TreeArg),
    /// All 2^k sign-equivalent trees, written as tree files.
    EnumerateSigns {
        #[command(flatten)]
        tree: TreeArg,
        /// Directory for the tree files (default: next to --out).
        #[arg(long)]
        tree_dir: Option<PathBuf>,
    },
    /// Per-edge sign variables and their constraints.
    SignReport(TreeArg),
    /// I(X; Y~) in closed form and/or from the joint determinant.
    Mi {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long, value_enum, default_value_t = MiMethod::Both)]
        method: MiMethod,
    },
    /// Monte Carlo I(X; Y), I(X; B | Y), I(X; B) and the chain and
    /// decomposition checks.
    MiConditional {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long, value_enum, default_value_t = Weighting::Prior)]
        weighting: Weighting,
    },
    /// Grid search for the pi maximizing I(X; B | Y).
    OptimizePi {
        #[command(flatten)]
        tree: TreeArg,
        /// Default: per-node for at most two hidden nodes, shared otherwise.
        #[arg(long, value_enum)]
        sweep: Option<Sweep>,
        #[arg(long, value_enum, default_value_t = Weighting::Prior)]
        weighting: Weighting,
        /// Also write the curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Margins of the achievable-rate inequalities.
    RateCheck(TreeArg),
    /// Build a codebook, emit blocks and estimate their divergence.
    Synthesize {
        #[command(flatten)]
        tree: TreeArg,
        #[command(flatten)]
        synth: SynthArgs,
        /// Blocks to emit into --csv.
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Write emitted samples as `run,t,node,value` rows.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// The six codebook constraints for a synthesized codebook.
    VerifyConstraints {
        #[command(flatten)]
        tree: TreeArg,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = lts_core::synthesis::DEFAULT_TV_THRESHOLD)]
        tv_threshold: f64,
    },
    /// Every analysis on one tree with pass/fail verdicts.
    ReportAll(TreeArg),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Covariance(_) => "covariance",
            Command::EnumerateSigns { .. } => "enumerate-signs",
            Command::SignReport(_) => "sign-report",
            Command::Mi { .. } => "mi",
            Command::MiConditional { .. } => "mi-conditional",
            Command::OptimizePi { .. } => "optimize-pi",
            Command::RateCheck(_) => "rate-check",
            Command::Synthesize { .. } => "synthesize",
            Command::VerifyConstraints { .. } => "verify-constraints",
            Command::ReportAll(_) => "report-all",
        }
    }

    pub fn tree(&self) -> &PathBuf {
        match self {
            Command::Validate(t) | Command::Covariance(t) | Command::SignReport(t) | Command::RateCheck(t) => &t.tree,
            Command::ReportAll(t) => &t.tree,
            Command::EnumerateSigns { tree, .. }
            | Command::Mi { tree, .. }
            | Command::MiConditional { tree, .. }
            | Command::OptimizePi { tree, .. }
            | Command::Synthesize { tree, .. }
            | Command::VerifyConstraints { tree, .. } => &tree.tree,
        }
    }
}
