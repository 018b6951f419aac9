//! Multi-axis gradient checkpointing for deep stacks of selective
//! linear-recurrence (SSD) layers.
//!
//! * [`ssd`], [`model`]: the layer and the full-cache reference stack.
//! * [`engine`]: checkpoints along both axes, restored cell by cell in the
//!   backward pass.
//! * [`planner`]: the analytic memory model and interval search.
//! * [`ledger`]: byte-exact accounting of live activations.
//! * [`trainer`]: synthetic tasks and finite-difference checks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`/`*32`
//! aliases below fix the element type.

pub mod config;
pub mod engine;
pub mod error;
pub mod ledger;
pub mod model;
pub mod planner;
pub mod rnn;
pub mod scalar;
pub mod ssd;
pub mod tensor;
pub mod trainer;

pub use config::ModelConfig;
pub use engine::{
    backward_grid, forward_checkpointed, recompute_cell, run_strategy, CellCache, CheckpointPlan,
    GridStore, RunMetrics, RunOutput, Strategy,
};
pub use error::{Error, Result};
pub use ledger::{ActivationLedger, LedgerError, Measurement, MeasurementRecord, Tag};
pub use model::{
    init_params, loss_mse, model_backward_full, model_forward_full, FullCache, GradientBundle,
    SsdModel, StepEvalCounter,
};
pub use planner::{
    calibrate, cube_root_plan, optimal_plan, raw_memory, regime, savings_ratio, strategy_memory,
    weighted_memory, Calibration, CostConstants, PlanReport, PlannerError, Probe, Regime,
};
pub use rnn::{rnn_step, Activation, RnnLayerParams};
pub use scalar::{Precision, Scalar};
pub use ssd::{
    chunk_backward, chunk_forward, project_selective, ssd_step, ChunkCache, LayerState, Selective,
    SsdLayerParams,
};
pub use tensor::Tensor;
pub use trainer::{
    adam_step, gen_task, gradcheck_fd, planned_strategy, sgd_step, train, AdamState,
    GradcheckOptions, GradcheckReport, LossCurve, Optimizer, TaskKind, TaskSpec,
};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type SsdModel64 = SsdModel<f64>;
pub type SsdModel32 = SsdModel<f32>;
pub type GradientBundle64 = GradientBundle<f64>;
pub type GradientBundle32 = GradientBundle<f32>;
pub type LayerState64 = LayerState<f64>;
pub type LayerState32 = LayerState<f32>;
pub type GridStore64 = GridStore<f64>;
pub type GridStore32 = GridStore<f32>;
