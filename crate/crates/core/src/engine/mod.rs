//! Two-axis checkpointing engine and the baseline strategies built on it.

mod grid;
mod plan;
mod strategy;

pub use grid::{backward_grid, forward_checkpointed, recompute_cell, CellCache, GridStore};
pub use plan::{CheckpointPlan, COARSE_GRANULARITY};
pub use strategy::{run_strategy, RunMetrics, RunOutput, Strategy};
