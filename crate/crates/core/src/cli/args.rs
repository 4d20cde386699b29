use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// IPF progression modelling: synthetic data, lung masks, training and
/// evaluation of the hybrid slope regressor.
#[derive(Debug, Parser)]
#[command(name = "ipf", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (clinical CSV plus CT phantoms) on disk.
    Synth(SynthArgs),
    /// Extract lung masks and write them as `.mask.pgm` files.
    Mask(MaskArgs),
    /// Cross-validated training; writes one checkpoint per fold and a JSONL log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a JSON metrics report.
    Eval(EvalArgs),
    /// Write per-patient slopes and reconstructed FVC curves as CSV.
    Predict(PredictArgs),
    /// Fit Gaussian and Laplace distributions to the FVC values (CSV and SVG).
    Distfit(DistfitArgs),
    /// Write the context-gate output channels of one slice as PGM images.
    DumpFeatures(DumpArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed recorded in every artifact.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskFlags {
    /// Use an all-ones mask (with a warning) where no lung region is found.
    #[arg(long)]
    pub fallback_ones: bool,
}

#[derive(Debug, Args)]
pub struct ScoringFlags {
    /// `train-residual` (σ = √2 · mean absolute training residual) or
    /// `fixed:<sigma>` in mL.
    #[arg(long, value_name = "POLICY")]
    pub sigma_policy: Option<String>,
    /// Also report the clipped Laplace score; `--clip` alone uses 70,1000.
    #[arg(long, value_name = "SIGMA_MIN,ERROR_MAX", num_args = 0..=1, default_missing_value = "70,1000")]
    pub clip: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of patients.
    #[arg(long)]
    pub patients: Option<usize>,
    /// Lung-bearing slices per patient.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Slice width and height in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// FVC visits per patient.
    #[arg(long)]
    pub visits: Option<usize>,
    /// Measurement noise standard deviation, mL.
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub masks: MaskFlags,
    /// PGM slices, or dataset directories (their kept slices are processed).
    #[arg(required = true, value_name = "INPUT")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub masks: MaskFlags,
    #[command(flatten)]
    pub scoring: ScoringFlags,
    /// Dataset directory (clinical.csv and ct/).
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Epochs per fold.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Slices per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Arithmetic precision of training.
    #[arg(long, value_name = "f32|f64")]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub masks: MaskFlags,
    #[command(flatten)]
    pub scoring: ScoringFlags,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Arithmetic precision of inference.
    #[arg(long, value_name = "f32|f64")]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub masks: MaskFlags,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Arithmetic precision of inference.
    #[arg(long, value_name = "f32|f64")]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct DistfitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory, or a clinical CSV file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub masks: MaskFlags,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Patient to visualize; defaults to the first one.
    #[arg(long)]
    pub patient: Option<String>,
    /// Index into the patient's kept slices.
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
}
