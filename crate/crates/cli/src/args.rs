use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pleas_core::budget::Orientation;
use pleas_core::matching::MatchMode;
use pleas_core::merging::{LsScope, ObjectiveVariant, TargetMode};
use pleas_core::pipeline::{MatchFeatureName, Method};
use serde::Serialize;

fn parse<T: std::str::FromStr<Err = pleas_core::Error>>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "pleas", version, about = "Merge two feed-forward networks of the same architecture into one of tunable size")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (or file, for `match` and `plan-budget`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log filter, e.g. `info` or `pleas_core=debug`.
    #[arg(long, global = true, env = "PLEAS_LOG", default_value = "info")]
    pub log_level: String,
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print the resolved plan without writing checkpoints.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train a small MLP on a dataset.
    TrainToy(TrainToy),
    /// Write a synthetic pair of related Gaussian-mixture tasks as CSV.
    MakeTask(MakeTask),
    /// Record a model's activations on a dataset.
    CollectActs(CollectActs),
    /// Align model B's hidden units to model A's.
    Match(Match),
    /// Choose per-layer merge ratios for a footprint budget.
    PlanBudget(PlanBudget),
    /// Merge two models.
    Merge(Merge),
    /// Accuracy of a model (or a two-model ensemble) on datasets.
    Eval(Eval),
    /// Linear-probe accuracy on frozen penultimate features.
    Probe(Probe),
    /// Sweep methods, budgets and seeds into a CSV.
    Tradeoff(Tradeoff),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToy {
    /// Training data: a CSV file or an `IMAGES,LABELS` IDX pair.
    #[arg(long)]
    pub data: PathBuf,
    /// Boundary widths, input to output.
    #[arg(long, value_delimiter = ',', required = true)]
    pub widths: Vec<usize>,
    #[arg(long)]
    pub batchnorm: bool,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindArg {
    /// Same labels, task B's inputs rotated.
    Rotation,
    /// Disjoint label subsets, same input distribution.
    Disjoint,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeTask {
    #[arg(long, value_enum, default_value_t = TaskKindArg::Rotation)]
    pub kind: TaskKindArg,
    /// Rotation of task B in radians.
    #[arg(long, default_value_t = 0.6)]
    pub angle: f64,
    /// Classes of task A for `disjoint` (default: the first half).
    #[arg(long, value_delimiter = ',')]
    pub subset_a: Vec<usize>,
    /// Classes of task B for `disjoint` (default: the second half).
    #[arg(long, value_delimiter = ',')]
    pub subset_b: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Also write `proxy.csv`, drawn at this rotation.
    #[arg(long)]
    pub proxy_angle: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub proxy_per_class: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureArg {
    Inputs,
    PreActivations,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct CollectActs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = CaptureArg::Both)]
    pub capture: CaptureArg,
}

/// Data behind matching, refitting, the surrogate and the batch-norm reset.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Model A's training data.
    #[arg(long)]
    pub data_a: Option<PathBuf>,
    /// Model B's training data.
    #[arg(long)]
    pub data_b: Option<PathBuf>,
    /// Stand-in data replacing both task datasets.
    #[arg(long, conflicts_with_all = ["data_a", "data_b"])]
    pub proxy_data: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Match {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_parser = parse::<MatchMode>, default_value = "activation")]
    pub mode: MatchMode,
    #[arg(long, value_parser = parse::<MatchFeatureName>, default_value = "inputs")]
    pub feature: MatchFeatureName,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverArg {
    ClosedForm,
    GradientDescent,
}

#[derive(Debug, Args, Serialize)]
pub struct RefitArgs {
    #[arg(long, value_parser = parse::<TargetMode>, default_value = "pre_activation")]
    pub target_mode: TargetMode,
    #[arg(long, value_parser = parse::<ObjectiveVariant>, default_value = "pleas")]
    pub objective_variant: ObjectiveVariant,
    #[arg(long, value_parser = parse::<LsScope>, default_value = "merged_rows_only")]
    pub ls_scope: LsScope,
    #[arg(long, value_enum, default_value_t = SolverArg::ClosedForm)]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 100)]
    pub gd_steps: usize,
    /// Gradient step as a fraction of the inverse Lipschitz constant.
    #[arg(long, default_value_t = 1.0)]
    pub gd_lr: f64,
    /// Ridge toward the constructed weights (default: scaled to the data).
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, value_parser = parse::<MatchFeatureName>, default_value = "inputs")]
    pub match_feature: MatchFeatureName,
    #[arg(long, default_value_t = 100)]
    pub bn_batches: usize,
    #[arg(long, default_value_t = 32)]
    pub bn_batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BudgetArgs {
    /// Ratio grid resolution: ratios are multiples of 1/q.
    #[arg(long, default_value_t = pleas_core::budget::DEFAULT_GRID)]
    pub q: usize,
    #[arg(long, value_parser = parse::<Orientation>, default_value = "unmerged_fraction")]
    pub orientation: Orientation,
    /// Refit each leave-one-out configuration before scoring it.
    #[arg(long)]
    pub surrogate_refit: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanBudget {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub budget: f64,
    /// Precomputed permutations; otherwise matched with `--mode`.
    #[arg(long)]
    pub perms: Option<PathBuf>,
    #[arg(long, value_parser = parse::<MatchMode>, default_value = "activation")]
    pub mode: MatchMode,
    #[command(flatten)]
    pub budget_args: BudgetArgs,
    #[command(flatten)]
    pub refit: RefitArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct Merge {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Default: `pleas`, or the method matching the mode of `--perms`.
    #[arg(long, value_parser = parse::<Method>)]
    pub method: Option<Method>,
    #[arg(long, conflicts_with_all = ["ratios", "plan"])]
    pub budget: Option<f64>,
    /// Interior merge ratios, one per hidden boundary.
    #[arg(long, value_delimiter = ',', conflicts_with = "plan")]
    pub ratios: Vec<f64>,
    /// Ratios from a `plan-budget` output.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub perms: Option<PathBuf>,
    #[command(flatten)]
    pub budget_args: BudgetArgs,
    #[command(flatten)]
    pub refit: RefitArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct Eval {
    #[arg(long)]
    pub model: PathBuf,
    /// Second model; evaluates the logit-average ensemble.
    #[arg(long)]
    pub with: Option<PathBuf>,
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Probe {
    #[arg(long)]
    pub model: PathBuf,
    /// Second model; probes both feature sets stacked.
    #[arg(long)]
    pub with: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct Tradeoff {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub train_a: PathBuf,
    #[arg(long)]
    pub train_b: PathBuf,
    /// Evaluation datasets, one per task.
    #[arg(long, required = true)]
    pub test: Vec<PathBuf>,
    /// Replaces the training data for matching, refitting and the reset.
    #[arg(long)]
    pub proxy_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.2, 1.5, 2.0])]
    pub budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse::<Method>)]
    pub methods: Vec<Method>,
    /// Default: the global `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub budget_args: BudgetArgs,
    #[command(flatten)]
    pub refit: RefitArgs,
}
