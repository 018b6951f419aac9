use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use magc_core::{Precision, TaskKind};

#[derive(Debug, Parser)]
#[command(name = "magc", version, about = "Two-axis gradient checkpointing: planner, benchmarks, checks")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// output file (stdout when absent, except for bench)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// cap on activation overhead per run, in ledger units (bytes)
    #[arg(long, global = true)]
    pub budget_units: Option<u64>,
    /// sequence-interval granularity; overrides --paper-faithful
    #[arg(long, global = true)]
    pub granularity: Option<usize>,
    /// restrict sequence intervals to multiples of 256 when S >= 256
    #[arg(long, global = true)]
    pub paper_faithful: bool,
    /// `key = value` file; flags on the command line take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

impl GlobalArgs {
    pub fn granularity_for(&self, seq_len: usize) -> usize {
        self.granularity
            .unwrap_or_else(|| magc_core::CheckpointPlan::granularity_for(seq_len, self.paper_faithful))
    }
}

#[derive(Debug, Clone, Args)]
pub struct Geometry {
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long = "dim", default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long = "state", default_value_t = 4)]
    pub state_dim: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal checkpoint intervals for an L x S grid
    Plan(PlanArgs),
    /// Measure every strategy over a sweep of sequence lengths
    Bench(BenchArgs),
    /// Finite-difference check of the grid gradients
    Gradcheck(GradcheckArgs),
    /// Fit cost constants to measured probe runs
    Calibrate(CalibrateArgs),
    /// Train on a synthetic task and emit the loss curve
    Train(TrainArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub layers: usize,
    #[arg(long)]
    pub seq: usize,
    /// unit, mamba2-370m, mamba2-1.3b, mamba2-2.7b
    #[arg(long, default_value = "unit", conflicts_with = "constants")]
    pub preset: String,
    /// JSON constants, or a calibration file from `calibrate`
    #[arg(long)]
    pub constants: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// comma-separated layer counts
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub layers: Vec<usize>,
    #[arg(long = "dim", default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long = "state", default_value_t = 4)]
    pub state_dim: usize,
    /// smallest sequence length as a power of two
    #[arg(long, default_value_t = 8)]
    pub min_pow: u32,
    /// largest sequence length as a power of two
    #[arg(long, default_value_t = 13)]
    pub max_pow: u32,
    #[arg(long, value_delimiter = ',', default_value = "gc_off,gc_on,sqrt_gc,magc")]
    pub strategies: Vec<String>,
    /// timed runs per cell; the fastest is reported
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// plot data path (default: the CSV path with a .plot extension)
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long = "dim", default_value_t = 2)]
    pub d_model: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long = "state", default_value_t = 2)]
    pub state_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub seq: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// perturb the analytic gradient (negative control)
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub geometry: Geometry,
    /// probe plans as l:s:S, comma separated
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1:64:512,2:32:1024,4:16:512,8:128:1024,2:8:256,4:64:2048"
    )]
    pub probes: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "decay_sum")]
    pub task: TaskKind,
    #[arg(long, default_value_t = 0)]
    pub delay: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long = "dim", default_value_t = 8)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long = "state", default_value_t = 4)]
    pub state_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub seq: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value = "magc")]
    pub strategy: String,
    /// adam or sgd
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
}
