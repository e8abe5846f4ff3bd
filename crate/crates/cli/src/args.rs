use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use parrot_core::fusion::{ArchConfig, FusionKind};
use parrot_core::ot::SinkhornConfig;
use parrot_core::train::TrainConfig;

use crate::CliError;

/// Two-stream embedding fusion: synthesise data, cross-validate, train,
/// evaluate and inspect models.
#[derive(Debug, Parser)]
#[command(name = "parrot", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded pair of complementary synthetic PFV files.
    Synth(SynthArgs),
    /// k-fold cross-validation; writes report.json, folds.csv and confusion.csv.
    Cv(CvArgs),
    /// Train on every row and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a PFV pair.
    Eval(EvalArgs),
    /// Print a checkpoint's architecture and parameter shapes.
    Inspect(InspectArgs),
    /// Solve entropic OT for a cost matrix read from CSV.
    Sinkhorn(SinkhornArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes (at least 2).
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Embedding dimensions of the two streams, as `A,B`.
    #[arg(long, default_value = "64,96", value_parser = parse_dims)]
    pub dims: (usize, usize),
    /// Class separation in noise standard deviations; 0 gives label-free noise.
    #[arg(long, default_value_t = 10.0)]
    pub gap: f64,
    /// Base seed.
    #[arg(long, env = "PARROT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// PFV file for the first stream.
    #[arg(long)]
    pub ptm_a: PathBuf,
    /// PFV file for the second stream.
    #[arg(long)]
    pub ptm_b: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Fusion: parrot, concat, single-p or single-q.
    #[arg(long, default_value = "parrot")]
    pub fusion: FusionKind,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Mini-batch size; evaluation uses the same size.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Base seed for every random draw.
    #[arg(long, env = "PARROT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Sinkhorn entropic regularisation.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Maximum Sinkhorn iterations per batch.
    #[arg(long, default_value_t = 100)]
    pub sinkhorn_iters: usize,
    /// Early-stopping patience in epochs (0 disables).
    #[arg(long, default_value_t = 7)]
    pub patience: usize,
    /// Dropout rate after each projection and the head hidden layer.
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
}

impl ModelArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn arch(&self, dims: (usize, usize), classes: usize) -> ArchConfig {
        let mut arch = ArchConfig::new(dims.0, dims.1, classes, self.fusion);
        arch.dropout = self.dropout;
        arch.sinkhorn = SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.sinkhorn_iters,
            ..SinkhornConfig::default()
        };
        arch
    }

    /// Range checks that need no data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(|e| CliError::usage(e.to_string()))?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CliError::usage(format!("--dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(CliError::usage(format!("--epsilon must be positive, got {}", self.epsilon)));
        }
        if self.sinkhorn_iters == 0 {
            return Err(CliError::usage("--sinkhorn-iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for reports.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for model.prrt and training.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `parrot train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Evaluation batch size (the transport plan couples rows within a batch).
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Also write penultimate.csv: id, label and the head's hidden activations.
    #[arg(long)]
    pub export_penultimate: bool,
    /// Output directory for metrics.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint to describe.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct SinkhornArgs {
    /// CSV of cost values, one matrix row per line, no header.
    #[arg(long)]
    pub cost: PathBuf,
    /// Entropic regularisation.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Maximum iterations; 0 only reports the starting point.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Marginal tolerance for convergence.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `A,B`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a dimension"));
    Ok((parse(a)?, parse(b)?))
}
