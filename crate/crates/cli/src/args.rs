use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcm_core::simulate::Method;
use lcm_core::ModelKind;

use crate::profile::Mode;

#[derive(Debug, Parser)]
#[command(name = "lcm", version, about = "Latent class models for binary response data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a ground truth and a response matrix.
    Simulate(SimulateArgs),
    /// Estimate item parameters and class membership.
    Fit(FitArgs),
    /// Choose the number of classes by GIC.
    Select(SelectArgs),
    /// Compare an estimate with the truth.
    Eval(EvalArgs),
    /// Turn 7-point scale answers into binary responses.
    Ingest(IngestArgs),
    /// Summarize an estimate by item group.
    Profile(ProfileArgs),
    /// Run the method comparison on simulated data.
    Benchmark(BenchmarkArgs),
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: lcm_core::LcmError| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: lcm_core::LcmError| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub j: usize,
    #[arg(long)]
    pub l: usize,
    #[arg(long, value_parser = parse_model, default_value = "random")]
    pub model: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.8,0.9")]
    pub theta_pool: Vec<f64>,
    /// Smallest class proportion; defaults to min(0.1, 0.8/L).
    #[arg(long)]
    pub p_floor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Response CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth JSON to write.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    TensorEm,
    Tensor,
    EmRandom,
    EmInit,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::TensorEm => "tensor-em",
            FitMethod::Tensor => "tensor",
            FitMethod::EmRandom => "em-random",
            FitMethod::EmInit => "em-init",
        }
    }
}

/// Knobs shared by every command that fits models.
#[derive(Debug, Clone, Args)]
pub struct Tuning {
    /// Random restarts of the tensor power method.
    #[arg(long, default_value_t = 10)]
    pub k_restarts: usize,
    /// Power iterations per restart.
    #[arg(long, default_value_t = 30)]
    pub power_iters: usize,
    /// Item orderings averaged by the spectral step.
    #[arg(long, default_value_t = 1)]
    pub perms: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Per-subject log-likelihood gain below which EM stops.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub l: usize,
    #[arg(long, value_parser = parse_model, default_value = "random")]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value = "tensor-em")]
    pub method: FitMethod,
    /// Starting values (truth or fit JSON); required for em-init.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Random starts for em-random.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write runtime_ms as 0 so repeated runs give identical files.
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Gic1,
    Gic2,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_model, default_value = "random")]
    pub model: ModelKind,
    #[arg(long)]
    pub l_min: usize,
    #[arg(long)]
    pub l_max: usize,
    #[arg(long, value_enum)]
    pub criterion: CriterionArg,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// GIC table CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Mse,
    Errors,
    Rate,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub metric: Metric,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV of answers on a 1..7 scale.
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub has_header: bool,
    /// CSV of item_index,sign rows.
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Fit JSON.
    #[arg(long)]
    pub est: PathBuf,
    /// CSV of item,group rows.
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long, value_enum, default_value = "absolute")]
    pub mode: Mode,
    /// Label grid CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the group means behind the labels.
    #[arg(long)]
    pub means_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// JSON list of {"id", "design"} settings; replaces the single-setting flags.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "s1")]
    pub id: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub j: usize,
    #[arg(long, default_value_t = 5)]
    pub l: usize,
    #[arg(long, value_parser = parse_model, default_value = "random")]
    pub model: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.8,0.9")]
    pub theta_pool: Vec<f64>,
    #[arg(long)]
    pub p_floor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_method,
        default_value = "em_true,em_random,tensor,tensor_em"
    )]
    pub methods: Vec<Method>,
    /// Worker threads for replications; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub em_restarts: usize,
    /// Item orderings averaged by the tensor-alone baseline.
    #[arg(long, default_value_t = 5)]
    pub tensor_perms: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub omit_timing: bool,
}
