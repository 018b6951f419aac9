//! Training on synthetic sequence tasks, plus the finite-difference
//! gradient check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::engine::{run_strategy, CheckpointPlan, Strategy};
use crate::error::{Error, Result};
use crate::ledger::ActivationLedger;
use crate::model::{init_params, loss_mse, model_forward_full, GradientBundle, SsdModel, StepEvalCounter};
use crate::planner::{optimal_plan, CostConstants};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `target_t = x_{t - delay}`, zero before the delay has elapsed
    DelayedCopy,
    /// `target_t = sum_{k <= t} 0.9^(t-k) x_k`
    DecaySum,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "delayed_copy" => Ok(TaskKind::DelayedCopy),
            "decay_sum" => Ok(TaskKind::DecaySum),
            other => Err(format!("unknown task `{other}` (expected delayed_copy or decay_sum)")),
        }
    }
}

pub const DECAY_SUM_RATE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seq_len: usize,
    pub d: usize,
    pub delay: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, seq_len: usize, d: usize, seed: u64) -> Self {
        Self {
            kind,
            seq_len,
            d,
            delay: 0,
            seed,
        }
    }

    pub fn with_delay(mut self, delay: usize) -> Self {
        self.delay = delay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.d == 0 {
            return Err(Error::Config("task needs S >= 1 and d >= 1".into()));
        }
        if self.delay >= self.seq_len {
            return Err(Error::Config(format!(
                "delay {} must be smaller than S = {}",
                self.delay, self.seq_len
            )));
        }
        Ok(())
    }
}

/// Standard-normal inputs and the task's targets.
pub fn gen_task<T: Scalar>(spec: &TaskSpec) -> Result<(Tensor<T>, Tensor<T>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = [spec.seq_len, spec.d];
    let x = Tensor::from_fn(&shape, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::from_f64_lossy(z)
    });
    Ok((x.clone(), task_targets(spec, &x)))
}

pub(crate) fn task_targets<T: Scalar>(spec: &TaskSpec, x: &Tensor<T>) -> Tensor<T> {
    let mut target = Tensor::zeros(x.shape());
    match spec.kind {
        TaskKind::DelayedCopy => {
            for t in spec.delay..spec.seq_len {
                target.row_mut(t).copy_from_slice(x.row(t - spec.delay));
            }
        }
        TaskKind::DecaySum => {
            let rate = T::from_f64_lossy(DECAY_SUM_RATE);
            let mut acc = vec![T::zero(); spec.d];
            for t in 0..spec.seq_len {
                for (a, v) in acc.iter_mut().zip(x.row(t)) {
                    *a = rate * *a + *v;
                }
                target.row_mut(t).copy_from_slice(&acc);
            }
        }
    }
    target
}

fn check_congruent<T: Scalar>(model: &SsdModel<T>, grads: &GradientBundle<T>) -> Result<()> {
    let ok = model.layers.len() == grads.layers.len()
        && model.layers.iter().zip(&grads.layers).all(|(p, g)| {
            p.tensors()
                .iter()
                .zip(g.tensors())
                .all(|(a, b)| a.len() == b.len())
        });
    if !ok {
        return Err(Error::shape(&[model.num_params()], &[grads.layers.len()]));
    }
    Ok(())
}

/// `p <- p - lr * g`
pub fn sgd_step<T: Scalar>(model: &mut SsdModel<T>, grads: &GradientBundle<T>, lr: T) -> Result<()> {
    check_congruent(model, grads)?;
    for (p, g) in model.layers.iter_mut().zip(&grads.layers) {
        for (pt, gt) in p.tensors_mut().into_iter().zip(g.tensors()) {
            pt.iter_mut().zip(gt).for_each(|(w, dw)| *w -= lr * *dw);
        }
    }
    Ok(())
}

/// Moment accumulators for [`adam_step`], one flat vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &SsdModel<T>, lr: T) -> Self {
        let zeros: Vec<Vec<T>> = model.layers.iter().map(|l| vec![T::zero(); l.num_params()]).collect();
        Self {
            lr,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step<T: Scalar>(model: &mut SsdModel<T>, grads: &GradientBundle<T>, state: &mut AdamState<T>) -> Result<()> {
    check_congruent(model, grads)?;
    if state.m.len() != model.layers.len() {
        return Err(Error::shape(&[model.layers.len()], &[state.m.len()]));
    }
    state.step += 1;
    let one = T::one();
    let t = state.step as i32;
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for ((p, g), (m, v)) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let mut idx = 0;
        for (pt, gt) in p.tensors_mut().into_iter().zip(g.tensors()) {
            for (w, dw) in pt.iter_mut().zip(gt) {
                let mi = &mut m[idx];
                let vi = &mut v[idx];
                *mi = state.beta1 * *mi + (one - state.beta1) * *dw;
                *vi = state.beta2 * *vi + (one - state.beta2) * *dw * *dw;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
                idx += 1;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

/// Optimal grid plan for `cfg` under the engine's own byte costs.
pub fn planned_strategy(name: &str, cfg: &ModelConfig, seq_len: usize, granularity: usize) -> Result<Strategy> {
    let plan = if name == "magc" {
        let report = optimal_plan(cfg.layers, seq_len, &CostConstants::for_model(cfg), granularity)
            .map_err(|e| Error::Plan(e.to_string()))?;
        Some(report.plan(granularity))
    } else {
        None
    };
    Strategy::from_name(name, plan)
}

/// Loss after `k` updates for `k = 0..=steps`; `steps = 0` yields the single
/// initial evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l:e}\n"));
        }
        out
    }
}

/// Trains a fresh model from `seed` on `task`, taking gradients through
/// `strategy`. A non-finite loss aborts with [`Error::NonFinite`].
pub fn train<T: Scalar>(
    config: &ModelConfig,
    task: &TaskSpec,
    steps: usize,
    strategy: Strategy,
    seed: u64,
    optimizer: Optimizer,
) -> Result<LossCurve> {
    if task.d != config.d_model {
        return Err(Error::Config(format!(
            "task width {} != model width {}",
            task.d, config.d_model
        )));
    }
    let mut model = init_params::<T>(config, seed)?;
    let (x, target) = gen_task::<T>(task)?;
    let mut adam = match optimizer {
        Optimizer::Adam { lr } => Some(AdamState::new(&model, T::from_f64_lossy(lr))),
        Optimizer::Sgd { .. } => None,
    };
    let mut curve = LossCurve::default();
    for step in 0..=steps {
        let out = run_strategy(&model, &x, &target, strategy, &mut ActivationLedger::new())?;
        let loss = out.loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step} is {loss}")));
        }
        curve.losses.push(loss);
        if step == steps {
            break;
        }
        match (optimizer, adam.as_mut()) {
            (Optimizer::Adam { .. }, Some(state)) => adam_step(&mut model, &out.grads, state)?,
            (Optimizer::Sgd { lr }, _) => sgd_step(&mut model, &out.grads, T::from_f64_lossy(lr))?,
            _ => unreachable!("adam state exists iff the optimizer is adam"),
        }
    }
    Ok(curve)
}

/// Relative tolerance of the finite-difference check.
pub const GRADCHECK_REL_TOL: f64 = 1e-6;
/// Entries whose analytic and numeric values differ by at most this much
/// pass regardless of magnitude.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, floor / tol)`: relative error for ordinary
/// entries, absolute error scaled so `floor` maps onto `tol` near zero.
pub fn gradcheck_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(GRADCHECK_ABS_FLOOR / GRADCHECK_REL_TOL);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// upper bound on checked input entries (spread evenly); 0 skips inputs
    pub input_samples: usize,
    /// zero `w_delta` and leave the decay parameters out, so the decay is
    /// constant in time and the check covers only multilinear parameters
    pub fixed_decay: bool,
    /// test hook: perturb the analytic gradient before comparing
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            input_samples: 64,
            fixed_decay: false,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Largest parameter count the finite-difference check accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 2000;

/// Central differences over every parameter and a sample of input entries,
/// compared against gradients from the grid engine.
pub fn gradcheck_fd(config: &ModelConfig, task: &TaskSpec, seed: u64, opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut model = init_params::<f64>(config, seed)?;
    if model.num_params() > GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "{} parameters exceed the gradcheck limit of {GRADCHECK_MAX_PARAMS}",
            model.num_params()
        )));
    }
    if opts.fixed_decay {
        for l in &mut model.layers {
            l.w_delta.iter_mut().for_each(|w| *w = 0.0);
        }
    }
    let (x, target) = gen_task::<f64>(task)?;
    let (nl, s) = (config.layers, task.seq_len);
    let plan = CheckpointPlan::new(nl.div_ceil(2), s.div_ceil(4));
    let out = run_strategy(&model, &x, &target, Strategy::Magc(plan), &mut ActivationLedger::new())?;
    let mut grads = out.grads;
    if opts.corrupt {
        grads.layers[0].w_b[0] += 1e-3 + 1e-2 * grads.layers[0].w_b[0].abs();
    }

    let loss_at = |m: &SsdModel<f64>, xs: &Tensor<f64>| -> Result<f64> {
        let (y, _, _) = model_forward_full(m, xs, &mut ActivationLedger::new(), &mut StepEvalCounter::default())?;
        Ok(loss_mse(&y, &target)?.0)
    };
    let eps = opts.eps;
    let mut max_err = 0.0f64;
    let mut checked = 0;

    for k in 0..nl {
        for ti in 0..6 {
            if opts.fixed_decay && ti < 2 {
                continue;
            }
            let len = model.layers[k].tensors()[ti].len();
            for e in 0..len {
                let orig = model.layers[k].tensors()[ti][e];
                model.layers[k].tensors_mut()[ti][e] = orig + eps;
                let plus = loss_at(&model, &x)?;
                model.layers[k].tensors_mut()[ti][e] = orig - eps;
                let minus = loss_at(&model, &x)?;
                model.layers[k].tensors_mut()[ti][e] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                max_err = max_err.max(gradcheck_error(grads.layers[k].tensors()[ti][e], numeric));
                checked += 1;
            }
        }
    }

    let stride = x.len().div_ceil(opts.input_samples.max(1)).max(1);
    let samples = if opts.input_samples == 0 { 0 } else { x.len() };
    for e in (0..samples).step_by(stride) {
        let mut xp = x.clone();
        xp.data_mut()[e] += eps;
        let mut xm = x.clone();
        xm.data_mut()[e] -= eps;
        let numeric = (loss_at(&model, &xp)? - loss_at(&model, &xm)?) / (2.0 * eps);
        max_err = max_err.max(gradcheck_error(grads.input.data()[e], numeric));
        checked += 1;
    }

    Ok(GradcheckReport {
        max_rel_err: max_err,
        checked,
        pass: max_err <= GRADCHECK_REL_TOL,
    })
}
