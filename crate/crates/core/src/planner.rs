//! Analytic activation-memory model for two-axis checkpointing and the
//! interval search built on it.
//!
//! With `L` layers, `S` steps and intervals `(l, s)`:
//!
//! ```text
//! M_raw = L*S/l + L*S/s + l*s
//! M     = (L*S/l) c_l + (L*S/s) c_s + l*s c_grid + s c_state
//! ```
//!
//! The first two terms are the layer-axis and sequence-axis checkpoints, the
//! third the cache of one recomputed cell, the fourth the state trajectory a
//! cell backward replays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelConfig;
use crate::engine::{CheckpointPlan, Strategy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("no feasible sequence interval: granularity {granularity} > S = {seq_len}")]
    EmptyFeasibleSet { granularity: usize, seq_len: usize },
    #[error("memory must be positive, got {0}")]
    NonPositiveMemory(f64),
    #[error("calibration needs at least 4 probes, got {0}")]
    TooFewProbes(usize),
    #[error("probe design matrix is rank deficient (rank {rank} < 4)")]
    RankDeficient { rank: usize },
    #[error("calibration produced negative constants {0:?}")]
    NegativeConstant([f64; 4]),
}

pub type PlanResult<T> = std::result::Result<T, PlannerError>;

/// Per-unit costs of each memory term, in whatever unit the measurements use
/// (bytes for the activation ledger, elements for published tables).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub c_l: f64,
    pub c_s: f64,
    pub c_grid: f64,
    pub c_state: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        Self::UNIT
    }
}

impl CostConstants {
    /// Reduces [`weighted_memory`] to [`raw_memory`].
    pub const UNIT: Self = Self {
        c_l: 1.0,
        c_s: 1.0,
        c_grid: 1.0,
        c_state: 0.0,
    };

    /// Published Mamba-2 370m constants (BF16 element counts).
    pub const MAMBA2_370M: Self = Self {
        c_l: 1024.0,
        c_s: 269_056.0,
        c_grid: 6432.0,
        c_state: 264_448.0,
    };

    /// Published Mamba-2 1.3b constants (BF16 element counts).
    pub const MAMBA2_1_3B: Self = Self {
        c_l: 2048.0,
        c_s: 537_344.0,
        c_grid: 12_608.0,
        c_state: 528_640.0,
    };

    /// Published Mamba-2 2.7b constants (BF16 element counts).
    pub const MAMBA2_2_7B: Self = Self {
        c_l: 2560.0,
        c_s: 671_488.0,
        c_grid: 15_696.0,
        c_state: 660_736.0,
    };

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "unit" => Some(Self::UNIT),
            "mamba2-370m" => Some(Self::MAMBA2_370M),
            "mamba2-1.3b" => Some(Self::MAMBA2_1_3B),
            "mamba2-2.7b" => Some(Self::MAMBA2_2_7B),
            _ => None,
        }
    }

    /// Byte costs of the engine's own accounting for `cfg`. `c_state` is the
    /// replayed state plus two gradient rows per step of a cell.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        let b = cfg.precision.bytes() as f64;
        let (d, sl) = (cfg.d_model as f64, cfg.state_len() as f64);
        Self {
            c_l: d * b,
            c_s: sl * b,
            c_grid: cfg.cache_len_per_step() as f64 * b,
            c_state: (sl + 2.0 * d) * b,
        }
    }

    pub fn validate(&self) -> PlanResult<()> {
        let all = [self.c_l, self.c_s, self.c_grid, self.c_state];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) || self.c_grid <= 0.0 {
            return Err(PlannerError::OutOfRange(format!(
                "constants must be finite and non-negative with c_grid > 0: {self:?}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 4] {
        [self.c_l, self.c_s, self.c_grid, self.c_state]
    }
}

fn check_range(l: f64, s: f64, layers: f64, seq_len: f64) -> PlanResult<()> {
    if !(layers >= 1.0 && seq_len >= 1.0) {
        return Err(PlannerError::OutOfRange(format!("L = {layers}, S = {seq_len}")));
    }
    if !(1.0..=layers).contains(&l) || !(1.0..=seq_len).contains(&s) {
        return Err(PlannerError::OutOfRange(format!(
            "(l, s) = ({l}, {s}) outside [1, {layers}] x [1, {seq_len}]"
        )));
    }
    Ok(())
}

/// `L*S/l + L*S/s + l*s`. Real-valued arguments are allowed.
pub fn raw_memory(l: f64, s: f64, layers: f64, seq_len: f64) -> PlanResult<f64> {
    check_range(l, s, layers, seq_len)?;
    let ls = layers * seq_len;
    Ok(ls / l + ls / s + l * s)
}

/// Weighted form including the per-step state replay term.
pub fn weighted_memory(l: f64, s: f64, layers: f64, seq_len: f64, c: &CostConstants) -> PlanResult<f64> {
    check_range(l, s, layers, seq_len)?;
    let ls = layers * seq_len;
    Ok(ls / l * c.c_l + ls / s * c.c_s + l * s * c.c_grid + s * c.c_state)
}

/// Stationary point of [`raw_memory`]: `l = s = cbrt(L*S)`, `M = 3 (L*S)^(2/3)`.
pub fn cube_root_plan(layers: f64, seq_len: f64) -> (f64, f64, f64) {
    let c = (layers * seq_len).cbrt();
    (c, c, 3.0 * c * c)
}

/// Asymptotic regime of the optimized memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `Theta((LS)^(2/3))` when `L <= S^2` and `S <= L^2`
    CubeRoot,
    /// `Theta(S)` when `L^2 <= S`
    LinearInS,
    /// `Theta(L)` when `S^2 <= L`
    LinearInL,
}

/// Boundary cases satisfy more than one condition; `CubeRoot` wins ties.
pub fn regime(layers: usize, seq_len: usize) -> Regime {
    let (l, s) = (layers as u128, seq_len as u128);
    if l <= s * s && s <= l * l {
        Regime::CubeRoot
    } else if l * l <= s {
        Regime::LinearInS
    } else {
        Regime::LinearInL
    }
}

/// `L*S / M`.
pub fn savings_ratio(layers: f64, seq_len: f64, memory: f64) -> PlanResult<f64> {
    if memory.is_nan() || memory <= 0.0 {
        return Err(PlannerError::NonPositiveMemory(memory));
    }
    Ok(layers * seq_len / memory)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    #[serde(rename = "l")]
    pub l_star: usize,
    #[serde(rename = "s")]
    pub s_star: usize,
    pub predicted_units: f64,
    pub predicted_raw: f64,
    pub regime: Regime,
    pub savings_ratio: f64,
    pub constants: CostConstants,
}

impl PlanReport {
    pub fn plan(&self, granularity: usize) -> CheckpointPlan {
        CheckpointPlan::new(self.l_star, self.s_star).with_granularity(granularity)
    }
}

/// Exhaustive minimization of [`weighted_memory`] over integer `l` in
/// `[1, L]` and `s` in multiples of `granularity` up to `S`. Ties go to the
/// smaller `l`, then the smaller `s`.
pub fn optimal_plan(
    layers: usize,
    seq_len: usize,
    constants: &CostConstants,
    granularity: usize,
) -> PlanResult<PlanReport> {
    constants.validate()?;
    if layers == 0 || seq_len == 0 || granularity == 0 {
        return Err(PlannerError::OutOfRange(format!(
            "L = {layers}, S = {seq_len}, granularity = {granularity}"
        )));
    }
    if granularity > seq_len {
        return Err(PlannerError::EmptyFeasibleSet { granularity, seq_len });
    }
    let (lf, sf) = (layers as f64, seq_len as f64);
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for l in 1..=layers {
        for s in (granularity..=seq_len).step_by(granularity) {
            let m = weighted_memory(l as f64, s as f64, lf, sf, constants)?;
            if m < best.0 {
                best = (m, l, s);
            }
        }
    }
    let (predicted_units, l_star, s_star) = best;
    let predicted_raw = raw_memory(l_star as f64, s_star as f64, lf, sf)?;
    Ok(PlanReport {
        l_star,
        s_star,
        predicted_units,
        predicted_raw,
        regime: regime(layers, seq_len),
        savings_ratio: savings_ratio(lf, sf, predicted_raw)?,
        constants: *constants,
    })
}

/// Predicted activation memory of `strategy` under the same cost model.
/// The full cache keeps every per-step row, one gradient state per layer,
/// and replays one layer's states.
pub fn strategy_memory(strategy: &Strategy, layers: usize, seq_len: usize, c: &CostConstants) -> PlanResult<f64> {
    let (lf, sf) = (layers as f64, seq_len as f64);
    match strategy.plan(layers, seq_len) {
        None => Ok(lf * sf * c.c_grid + lf * c.c_s + sf * c.c_state),
        Some(p) => weighted_memory(p.layer_interval as f64, p.seq_interval as f64, lf, sf, c),
    }
}

/// One measured run used to fit [`CostConstants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "S")]
    pub seq_len: usize,
    pub l: usize,
    pub s: usize,
    pub measured: f64,
}

impl Probe {
    fn basis(&self) -> [f64; 4] {
        let ls = (self.layers * self.seq_len) as f64;
        let (l, s) = (self.l as f64, self.s as f64);
        [ls / l, ls / s, l * s, s]
    }

    pub fn predict(&self, c: &CostConstants) -> f64 {
        self.basis()
            .iter()
            .zip(c.as_array())
            .map(|(b, k)| b * k)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub constants: CostConstants,
    /// `(predicted - measured) / measured` per probe, in input order
    pub residuals: Vec<f64>,
}

impl Calibration {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Ordinary least squares fit of the four constants to measured peaks.
pub fn calibrate(probes: &[Probe]) -> PlanResult<Calibration> {
    if probes.len() < 4 {
        return Err(PlannerError::TooFewProbes(probes.len()));
    }
    let rows: Vec<[f64; 4]> = probes.iter().map(Probe::basis).collect();
    // columns span many orders of magnitude; fit in unit-norm column space
    let mut scale = [0.0f64; 4];
    for r in &rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s += v * v;
        }
    }
    scale.iter_mut().for_each(|s| *s = s.sqrt().max(f64::MIN_POSITIVE));
    let a = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j] / scale[j]);
    let b = DVector::from_iterator(probes.len(), probes.iter().map(|p| p.measured));

    let svd = a.svd(true, true);
    let tol = 1e-10 * svd.singular_values.max();
    let rank = svd.rank(tol);
    if rank < 4 {
        return Err(PlannerError::RankDeficient { rank });
    }
    let x = svd
        .solve(&b, tol)
        .map_err(|e| PlannerError::OutOfRange(e.to_string()))?;
    let fitted: Vec<f64> = (0..4).map(|j| x[j] / scale[j]).collect();
    let arr = [fitted[0], fitted[1], fitted[2], fitted[3]];
    let magnitude = arr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if arr.iter().any(|v| *v < -1e-9 * magnitude) {
        return Err(PlannerError::NegativeConstant(arr));
    }
    let constants = CostConstants {
        c_l: arr[0].max(0.0),
        c_s: arr[1].max(0.0),
        c_grid: arr[2].max(0.0),
        c_state: arr[3].max(0.0),
    };
    let residuals = probes
        .iter()
        .map(|p| (p.predict(&constants) - p.measured) / p.measured)
        .collect();
    Ok(Calibration { constants, residuals })
}
