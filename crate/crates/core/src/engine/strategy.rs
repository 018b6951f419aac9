use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::ledger::ActivationLedger;
use crate::model::{
    loss_mse, model_backward_full, model_forward_full, GradientBundle, SsdModel, StepEvalCounter,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::grid::{backward_grid, forward_checkpointed};
use super::plan::CheckpointPlan;

/// How activations are kept between forward and backward.
///
/// `GcOn` and `SqrtGc` are layer-only checkpointing: they run on the grid
/// engine with a single sequence block (`s = S`) and layer interval 1 or
/// `ceil(sqrt(L))` respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    GcOff,
    GcOn,
    SqrtGc,
    Magc(CheckpointPlan),
}

impl Strategy {
    pub const NAMES: [&'static str; 4] = ["gc_off", "gc_on", "sqrt_gc", "magc"];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::GcOff => "gc_off",
            Strategy::GcOn => "gc_on",
            Strategy::SqrtGc => "sqrt_gc",
            Strategy::Magc(_) => "magc",
        }
    }

    /// Parses a strategy name; `magc` requires `plan`.
    pub fn from_name(name: &str, plan: Option<CheckpointPlan>) -> Result<Self> {
        match name {
            "gc_off" => Ok(Strategy::GcOff),
            "gc_on" => Ok(Strategy::GcOn),
            "sqrt_gc" => Ok(Strategy::SqrtGc),
            "magc" => plan
                .map(Strategy::Magc)
                .ok_or_else(|| Error::Plan("magc requires a checkpoint plan".into())),
            other => Err(Error::Plan(format!("unknown strategy `{other}`"))),
        }
    }

    /// The grid plan this strategy runs, or `None` for the full cache.
    pub fn plan(&self, layers: usize, seq_len: usize) -> Option<CheckpointPlan> {
        match self {
            Strategy::GcOff => None,
            Strategy::GcOn => Some(CheckpointPlan::new(1, seq_len)),
            Strategy::SqrtGc => Some(CheckpointPlan::new(sqrt_group(layers), seq_len)),
            Strategy::Magc(p) => Some(*p),
        }
    }
}

/// `ceil(sqrt(L))`, the layer group size of square-root checkpointing.
pub(crate) fn sqrt_group(layers: usize) -> usize {
    let mut g = (layers as f64).sqrt().floor() as usize;
    while g * g < layers {
        g += 1;
    }
    g.max(1)
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::from_name(s, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub baseline_units: u64,
    pub peak_units: u64,
    pub overhead_units: u64,
    pub step_evals: u64,
    pub counter: StepEvalCounter,
    /// forward + backward only
    pub wall_time: Duration,
    pub leak: bool,
    /// `(l, s)` actually run; `None` for the full cache
    pub plan: Option<CheckpointPlan>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub loss: T,
    pub grads: GradientBundle<T>,
    pub metrics: RunMetrics,
}

/// One forward + MSE loss + backward under `strategy`, measured on `ledger`.
pub fn run_strategy<T: Scalar>(
    model: &SsdModel<T>,
    x_seq: &Tensor<T>,
    target_seq: &Tensor<T>,
    strategy: Strategy,
    ledger: &mut ActivationLedger,
) -> Result<RunOutput<T>> {
    let seq_len = model.check_input(x_seq)?;
    target_seq.expect_shape(x_seq.shape())?;
    let plan = strategy.plan(model.num_layers(), seq_len);
    if let Some(p) = &plan {
        p.validate(model.num_layers(), seq_len)?;
    }

    let (res, m) = ledger.measure(|ledger| -> Result<_> {
        let mut counter = StepEvalCounter::default();
        let start = Instant::now();
        let (loss, grads) = match &plan {
            None => {
                let (y, _, cache) = model_forward_full(model, x_seq, ledger, &mut counter)?;
                let (loss, gy) = loss_mse(&y, target_seq)?;
                let grads = model_backward_full(model, cache, &gy, &model.zero_states(), ledger)?;
                (loss, grads)
            }
            Some(p) => {
                let (y, _, store) = forward_checkpointed(model, x_seq, p, ledger, &mut counter)?;
                let (loss, gy) = loss_mse(&y, target_seq)?;
                let grads = backward_grid(model, store, &gy, &model.zero_states(), p, ledger, &mut counter)?;
                (loss, grads)
            }
        };
        Ok((loss, grads, counter, start.elapsed()))
    });
    let (loss, grads, counter, wall_time) = res?;
    Ok(RunOutput {
        loss,
        grads,
        metrics: RunMetrics {
            baseline_units: m.baseline,
            peak_units: m.peak,
            overhead_units: m.overhead,
            step_evals: counter.total(),
            counter,
            wall_time,
            leak: m.leak,
            plan,
        },
    })
}
