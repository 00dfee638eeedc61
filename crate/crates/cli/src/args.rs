//! Command-line surface. Flags mirror the run-configuration fields; a
//! `--config` file (JSON object or key=value lines) supplies defaults that
//! flags override.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "survbank",
    version,
    about = "Survival analysis on tabular clinical records with missing values: \
             latent-class imputation, memory-bank Cox training, and censored-data metrics"
)]
pub struct Cli {
    /// Config file (JSON object or key=value lines); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with ground truth attached.
    Simulate(SimulateArgs),
    /// Fit the latent-class imputation model by EM.
    TrainImputer(TrainImputerArgs),
    /// Fill missing cells of a cohort with a trained imputer.
    Impute(ImputeArgs),
    /// Masked-imputation experiment: degradation against the mean baseline.
    ImputeEval(ImputeEvalArgs),
    /// Train the Cox risk model (memory bank by default).
    TrainSurvival(TrainSurvivalArgs),
    /// Discrimination and calibration of a trained model on a test cohort.
    Evaluate(EvaluateArgs),
    /// Stratified k-fold cross-validation of the whole pipeline.
    CrossValidate(CrossValidateArgs),
}

#[derive(Args, Clone)]
pub struct EmArgs {
    /// EM iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// EM stopping tolerance on the mean log-likelihood's relative change.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Additive pseudocount per category in every M-step normalization.
    #[arg(long)]
    pub smoothing: Option<f64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Generator specification JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory (cohort.csv, schema.json, truth.json).
    #[arg(long)]
    pub output: PathBuf,
    /// Override the spec's cohort size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainImputerArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Where to write the fitted model JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Hidden states of the mixture.
    #[arg(long)]
    pub latent_states: Option<usize>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the fit report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImputeMode {
    /// Exact joint posterior draw (nondeterministic without --seed).
    Sample,
    /// Most probable completion.
    Map,
    /// Marginal argmax for categorical cells, expected value for continuous.
    Expectation,
}

#[derive(Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Trained imputer model JSON.
    #[arg(long)]
    pub imputer: PathBuf,
    /// Completed cohort CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ImputeMode>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LcMode {
    Map,
    Expectation,
}

#[derive(Args)]
pub struct ImputeEvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory (impute_eval.json, impute_eval.csv).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub latent_states: Option<usize>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Comma-separated feature counts to drop per record.
    #[arg(long)]
    pub drop_counts: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Complete records reserved for the masked test split
    /// (default: a quarter of the complete records).
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Latent-class read-out used for the comparison.
    #[arg(long, value_enum)]
    pub lc_mode: Option<LcMode>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainImpute {
    Sample,
    Map,
}

#[derive(Args, Clone)]
pub struct TrainParams {
    /// Risk model architecture.
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma-separated hidden widths (mlp only).
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epoch after which the learning rate decays.
    #[arg(long)]
    pub lr_decay_epoch: Option<usize>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plain per-batch Cox training (skips all-censored batches).
    #[arg(long)]
    pub no_memory_bank: bool,
    /// How missing cells are filled when a patient enters a batch.
    #[arg(long, value_enum)]
    pub impute_mode: Option<TrainImpute>,
}

#[derive(Args)]
pub struct TrainSurvivalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Trained imputer model JSON (provides the binning).
    #[arg(long)]
    pub imputer: PathBuf,
    /// Where to write the risk model JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the per-epoch training log (JSON lines) here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub params: TrainParams,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub imputer: PathBuf,
    /// Trained risk model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Horizon for the censoring-weighted concordance
    /// (default: largest death time in the test split).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Censoring-weighted Brier score instead of the literal one.
    #[arg(long)]
    pub graf_brier: bool,
    /// Also write the report JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct CrossValidateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory (cv_report.json, cv_report.csv).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub latent_states: Option<usize>,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub graf_brier: bool,
    #[command(flatten)]
    pub params: TrainParams,
}
