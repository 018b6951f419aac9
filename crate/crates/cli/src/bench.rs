//! Strategy sweeps: one measured run per (strategy, L, S).

use std::io::Write;
use std::time::Duration;

use anyhow::Context;
use magc_core::{
    gen_task, init_params, CheckpointPlan, optimal_plan, run_strategy, ActivationLedger, CostConstants, Error, LedgerError,
    ModelConfig, Precision, RunMetrics, Scalar, Strategy, Tag, TaskKind, TaskSpec,
};

pub const CSV_HEADER: [&str; 11] = [
    "strategy",
    "L",
    "S",
    "l",
    "s",
    "peak_units",
    "predicted_units",
    "overhead_units",
    "step_evals",
    "wall_ms",
    "seed",
];

/// Written in the overhead column of runs the budget refused.
pub const BUDGET_EXCEEDED: &str = "-";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub strategy: String,
    pub layers: usize,
    pub seq_len: usize,
    pub l: Option<usize>,
    pub s: Option<usize>,
    pub peak_units: Option<u64>,
    /// cost-model prediction; magc only
    pub predicted_units: Option<f64>,
    pub overhead_units: Option<u64>,
    pub step_evals: Option<u64>,
    pub wall_ms: Option<f64>,
    pub seed: u64,
}

impl BenchRecord {
    pub fn feasible(&self) -> bool {
        self.overhead_units.is_some()
    }

    fn fields(&self) -> [String; 11] {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.strategy.clone(),
            self.layers.to_string(),
            self.seq_len.to_string(),
            opt(&self.l),
            opt(&self.s),
            opt(&self.peak_units),
            opt(&self.predicted_units),
            self.overhead_units
                .map_or_else(|| BUDGET_EXCEEDED.to_string(), |v| v.to_string()),
            opt(&self.step_evals),
            self.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default(),
            self.seed.to_string(),
        ]
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub config: ModelConfig,
    pub strategy: String,
    pub seq_len: usize,
    pub seed: u64,
    pub budget_units: Option<u64>,
    pub granularity: usize,
    pub repeats: usize,
}

/// Strategy for `name` with magc's intervals from the planner under the
/// engine's byte costs. Returns the prediction alongside.
pub fn resolve_strategy(name: &str, cfg: &ModelConfig, seq_len: usize, granularity: usize) -> anyhow::Result<(Strategy, Option<f64>)> {
    if name == "magc" {
        let report = optimal_plan(cfg.layers, seq_len, &CostConstants::for_model(cfg), granularity)?;
        Ok((Strategy::Magc(report.plan(granularity)), Some(report.predicted_units)))
    } else {
        Ok((Strategy::from_name(name, None)?, None))
    }
}

/// Runs `strategy` once on a fresh ledger, with the input and target
/// charged as the baseline.
pub fn measure<T: Scalar>(
    cfg: &ModelConfig,
    strategy: Strategy,
    seq_len: usize,
    seed: u64,
    budget_units: Option<u64>,
) -> Result<RunMetrics, Error> {
    let model = init_params::<T>(cfg, seed)?;
    let task = TaskSpec::new(TaskKind::DecaySum, seq_len, cfg.d_model, seed);
    let (x, target) = gen_task::<T>(&task)?;
    let mut ledger = ActivationLedger::new();
    ledger.charge_elems::<T>(Tag::Io, x.len() + target.len())?;
    ledger.set_budget(budget_units);
    Ok(run_strategy(&model, &x, &target, strategy, &mut ledger)?.metrics)
}

fn run_cell_typed<T: Scalar>(cell: &Cell) -> anyhow::Result<BenchRecord> {
    let cfg = cell.config.with_max_seq(cell.config.max_seq.max(cell.seq_len));
    let (strategy, predicted) = resolve_strategy(&cell.strategy, &cfg, cell.seq_len, cell.granularity)?;
    let plan = strategy.plan(cfg.layers, cell.seq_len);
    let mut record = BenchRecord {
        strategy: cell.strategy.clone(),
        layers: cfg.layers,
        seq_len: cell.seq_len,
        l: plan.map(|p| p.layer_interval),
        s: plan.map(|p| p.seq_interval),
        peak_units: None,
        predicted_units: predicted,
        overhead_units: None,
        step_evals: None,
        wall_ms: None,
        seed: cell.seed,
    };
    let mut fastest: Option<Duration> = None;
    for _ in 0..cell.repeats.max(1) {
        match measure::<T>(&cfg, strategy, cell.seq_len, cell.seed, cell.budget_units) {
            Ok(m) => {
                record.peak_units = Some(m.peak_units);
                record.overhead_units = Some(m.overhead_units);
                record.step_evals = Some(m.step_evals);
                fastest = Some(fastest.map_or(m.wall_time, |f| f.min(m.wall_time)));
            }
            Err(Error::Ledger(LedgerError::BudgetExceeded { .. })) => return Ok(record),
            Err(e) => return Err(e).with_context(|| format!("{} at L={} S={}", cell.strategy, cfg.layers, cell.seq_len)),
        }
    }
    record.wall_ms = fastest.map(|d| d.as_secs_f64() * 1e3);
    Ok(record)
}

pub fn run_cell(cell: &Cell) -> anyhow::Result<BenchRecord> {
    match cell.config.precision {
        Precision::F32 => run_cell_typed::<f32>(cell),
        Precision::F64 => run_cell_typed::<f64>(cell),
    }
}

/// Runs every cell on `jobs` threads; results come back in input order.
pub fn run_sweep(cells: &[Cell], jobs: usize) -> anyhow::Result<Vec<BenchRecord>> {
    let jobs = jobs.clamp(1, cells.len().max(1));
    if jobs == 1 {
        return cells.iter().map(run_cell).collect();
    }
    let mut slots: Vec<Option<anyhow::Result<BenchRecord>>> = (0..cells.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(&cells[i]);
                done.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every cell ran")).collect()
}

/// Sweep definition; expands into cells in (strategy, L, S) order.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub layers: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub state_dim: usize,
    pub precision: Precision,
    pub pows: std::ops::RangeInclusive<u32>,
    pub strategies: Vec<String>,
    pub seed: u64,
    pub budget_units: Option<u64>,
    pub granularity: Option<usize>,
    pub paper_faithful: bool,
    pub repeats: usize,
}

impl Sweep {
    pub fn cells(&self) -> anyhow::Result<Vec<Cell>> {
        if self.pows.is_empty() || *self.pows.end() >= usize::BITS {
            anyhow::bail!("empty or oversized power range {:?}", self.pows);
        }
        let mut cells = Vec::new();
        for name in &self.strategies {
            if !Strategy::NAMES.contains(&name.as_str()) {
                anyhow::bail!("unknown strategy `{name}` (expected one of {:?})", Strategy::NAMES);
            }
            for &nl in &self.layers {
                let cfg = ModelConfig::new(nl, self.d_model, self.heads, self.state_dim)?.with_precision(self.precision);
                for p in self.pows.clone() {
                    let seq_len = 1usize << p;
                    cells.push(Cell {
                        config: cfg.with_max_seq(seq_len.max(cfg.max_seq)),
                        strategy: name.clone(),
                        seq_len,
                        seed: self.seed,
                        budget_units: self.budget_units,
                        granularity: self
                            .granularity
                            .unwrap_or_else(|| CheckpointPlan::granularity_for(seq_len, self.paper_faithful)),
                        repeats: self.repeats,
                    });
                }
            }
        }
        Ok(cells)
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `S overhead` blocks, one per strategy and layer
/// count, separated by blank lines. Refused runs are left out.
pub fn write_plot<W: Write>(records: &[BenchRecord], mut out: W) -> anyhow::Result<()> {
    let mut first = true;
    let mut i = 0;
    while i < records.len() {
        let key = (&records[i].strategy, records[i].layers);
        if !first {
            writeln!(out)?;
            writeln!(out)?;
        }
        first = false;
        writeln!(out, "# {} L={}", key.0, key.1)?;
        writeln!(out, "# S overhead_units")?;
        while i < records.len() && (&records[i].strategy, records[i].layers) == key {
            if let Some(o) = records[i].overhead_units {
                writeln!(out, "{} {}", records[i].seq_len, o)?;
            }
            i += 1;
        }
    }
    Ok(())
}
