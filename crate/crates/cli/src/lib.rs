//! Command-line front end for `magc-core`.

pub mod args;
pub mod bench;
pub mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use magc_core::{
    calibrate, gradcheck_fd, optimal_plan, train, CheckpointPlan, CostConstants, Error, GradcheckOptions,
    ModelConfig, Optimizer, PlanReport, PlannerError, Precision, Probe, Strategy, TaskKind, TaskSpec,
};
use serde::Serialize;

use args::{BenchArgs, CalibrateArgs, Cli, Command, GlobalArgs, GradcheckArgs, PlanArgs, TrainArgs};
use bench::Sweep;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::CheckFailed => 1,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// bad arguments or inputs (exit 2)
    Usage(anyhow::Error),
    /// a run that started and failed (exit 1)
    Failure(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "usage error: {e:#}"),
            CliError::Failure(e) => write!(f, "error: {e:#}"),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn failure(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Failure(e.into())
}

/// Invalid geometry and plans are the caller's fault; anything else
/// happened mid-run.
fn core_error(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Plan(_) | Error::SequenceTooLong { .. } | Error::Shape { .. } => usage(e),
        other => failure(other),
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Plan(a) => {
            let report = cmd_plan(g, a)?;
            emit(&g.out, &to_json(&report)?)?;
            Ok(Outcome::Success)
        }
        Command::Bench(a) => cmd_bench(g, a),
        Command::Gradcheck(a) => {
            let r = cmd_gradcheck(g, a)?;
            emit(&g.out, &to_json(&r)?)?;
            Ok(if r.pass { Outcome::Success } else { Outcome::CheckFailed })
        }
        Command::Calibrate(a) => {
            let r = cmd_calibrate(g, a)?;
            emit(&g.out, &to_json(&r)?)?;
            Ok(Outcome::Success)
        }
        Command::Train(a) => {
            let csv = cmd_train(g, a)?;
            emit(&g.out, &csv)?;
            Ok(Outcome::Success)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(failure)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(failure),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(failure),
    }
}

/// Accepts bare constants or the output of `calibrate`.
pub fn load_constants(path: &Path) -> anyhow::Result<CostConstants> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = v.get("constants").cloned().unwrap_or(v);
    serde_json::from_value(inner).with_context(|| format!("{} holds no cost constants", path.display()))
}

pub fn cmd_plan(g: &GlobalArgs, a: &PlanArgs) -> Result<PlanReport, CliError> {
    let constants = match &a.constants {
        Some(p) => load_constants(p).map_err(usage)?,
        None => CostConstants::preset(&a.preset)
            .ok_or_else(|| usage(anyhow!("unknown preset `{}`", a.preset)))?,
    };
    if a.layers == 0 || a.seq == 0 {
        return Err(usage(anyhow!("--layers and --seq must be at least 1")));
    }
    optimal_plan(a.layers, a.seq, &constants, g.granularity_for(a.seq)).map_err(usage)
}

pub fn cmd_bench(g: &GlobalArgs, a: &BenchArgs) -> Result<Outcome, CliError> {
    if a.min_pow > a.max_pow {
        return Err(usage(anyhow!("--min-pow {} exceeds --max-pow {}", a.min_pow, a.max_pow)));
    }
    let sweep = Sweep {
        layers: a.layers.clone(),
        d_model: a.d_model,
        heads: a.heads,
        state_dim: a.state_dim,
        precision: g.precision,
        pows: a.min_pow..=a.max_pow,
        strategies: a.strategies.clone(),
        seed: g.seed,
        budget_units: g.budget_units,
        granularity: g.granularity,
        paper_faithful: g.paper_faithful,
        repeats: a.repeats,
    };
    let cells = sweep.cells().map_err(usage)?;
    let records = bench::run_sweep(&cells, a.jobs).map_err(failure)?;

    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    let plot = a.plot.clone().unwrap_or_else(|| out.with_extension("plot"));
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display())).map_err(failure)?;
    bench::write_csv(&records, file).map_err(failure)?;
    let file = fs::File::create(&plot).with_context(|| format!("creating {}", plot.display())).map_err(failure)?;
    bench::write_plot(&records, file).map_err(failure)?;

    for r in &records {
        match (r.overhead_units, r.wall_ms) {
            (Some(o), Some(ms)) => eprintln!(
                "{:>8} L={:<3} S={:<7} overhead={:<12} {:>10.0} tokens/s",
                r.strategy,
                r.layers,
                r.seq_len,
                o,
                r.seq_len as f64 / (ms / 1e3)
            ),
            _ => eprintln!("{:>8} L={:<3} S={:<7} over budget", r.strategy, r.layers, r.seq_len),
        }
    }
    eprintln!("{} records -> {} (plot data {})", records.len(), out.display(), plot.display());
    Ok(Outcome::Success)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckOutput {
    pub max_rel_err: f64,
    pub pass: bool,
}

pub fn cmd_gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> Result<GradcheckOutput, CliError> {
    if g.precision != Precision::F64 {
        return Err(usage(anyhow!("gradcheck runs in f64 only")));
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(anyhow!("--eps must be positive")));
    }
    let cfg = ModelConfig::new(a.layers, a.d_model, a.heads, a.state_dim).map_err(core_error)?;
    let task = TaskSpec::new(TaskKind::DecaySum, a.seq, a.d_model, g.seed);
    let opts = GradcheckOptions {
        eps: a.eps,
        corrupt: a.corrupt,
        ..GradcheckOptions::default()
    };
    let r = gradcheck_fd(&cfg, &task, g.seed, opts).map_err(core_error)?;
    Ok(GradcheckOutput {
        max_rel_err: r.max_rel_err,
        pass: r.pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationOutput {
    pub constants: CostConstants,
    pub residuals: Vec<f64>,
    pub probes: Vec<Probe>,
}

/// `l:s:S` -> `(l, s, S)`
pub fn parse_probe(text: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let [l, s, seq] = parts.as_slice() else {
        anyhow::bail!("probe `{text}` is not l:s:S");
    };
    let num = |v: &str| v.parse::<usize>().with_context(|| format!("probe `{text}`: `{v}` is not an integer"));
    Ok((num(l)?, num(s)?, num(seq)?))
}

/// Measures magc overhead on each probe plan and fits the constants.
pub fn calibrate_probes(
    cfg: &ModelConfig,
    plans: &[(usize, usize, usize)],
    seed: u64,
    budget_units: Option<u64>,
) -> Result<CalibrationOutput, CliError> {
    let distinct: BTreeSet<_> = plans.iter().collect();
    if distinct.len() < 4 {
        return Err(usage(PlannerError::TooFewProbes(distinct.len())));
    }
    let mut probes = Vec::with_capacity(distinct.len());
    for &&(l, s, seq_len) in &distinct {
        let cfg = cfg.with_max_seq(cfg.max_seq.max(seq_len));
        let strategy = Strategy::Magc(CheckpointPlan::new(l, s));
        let m = match cfg.precision {
            Precision::F32 => bench::measure::<f32>(&cfg, strategy, seq_len, seed, budget_units),
            Precision::F64 => bench::measure::<f64>(&cfg, strategy, seq_len, seed, budget_units),
        }
        .map_err(core_error)?;
        probes.push(Probe {
            layers: cfg.layers,
            seq_len,
            l,
            s,
            measured: m.overhead_units as f64,
        });
    }
    let fit = calibrate(&probes).map_err(|e| match e {
        PlannerError::RankDeficient { .. } | PlannerError::TooFewProbes(_) => usage(e),
        other => failure(other),
    })?;
    Ok(CalibrationOutput {
        constants: fit.constants,
        residuals: fit.residuals,
        probes,
    })
}

pub fn cmd_calibrate(g: &GlobalArgs, a: &CalibrateArgs) -> Result<CalibrationOutput, CliError> {
    let geo = &a.geometry;
    let cfg = ModelConfig::new(geo.layers, geo.d_model, geo.heads, geo.state_dim)
        .map_err(core_error)?
        .with_precision(g.precision);
    let plans = a.probes.iter().map(|p| parse_probe(p)).collect::<anyhow::Result<Vec<_>>>().map_err(usage)?;
    calibrate_probes(&cfg, &plans, g.seed, g.budget_units)
}

pub fn cmd_train(g: &GlobalArgs, a: &TrainArgs) -> Result<String, CliError> {
    let cfg = ModelConfig::new(a.layers, a.d_model, a.heads, a.state_dim)
        .map_err(core_error)?
        .with_precision(g.precision);
    let cfg = cfg.with_max_seq(cfg.max_seq.max(a.seq));
    let task = TaskSpec::new(a.task, a.seq, a.d_model, g.seed).with_delay(a.delay);
    task.validate().map_err(core_error)?;
    let (strategy, _) = bench::resolve_strategy(&a.strategy, &cfg, a.seq, g.granularity_for(a.seq)).map_err(usage)?;
    let optimizer = match a.optimizer.as_str() {
        "adam" => Optimizer::Adam { lr: a.lr },
        "sgd" => Optimizer::Sgd { lr: a.lr },
        other => return Err(usage(anyhow!("unknown optimizer `{other}` (expected adam or sgd)"))),
    };
    let curve = match g.precision {
        Precision::F32 => train::<f32>(&cfg, &task, a.steps, strategy, g.seed, optimizer),
        Precision::F64 => train::<f64>(&cfg, &task, a.steps, strategy, g.seed, optimizer),
    }
    .map_err(core_error)?;
    Ok(curve.to_csv())
}
