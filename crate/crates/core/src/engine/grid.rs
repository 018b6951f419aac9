//! Bi-axial checkpoint storage (forward) and grid-cell restoration (backward).
//!
//! Cell `(i, j)` covers sequence block `i` and layer block `j`, both 0-based
//! with `(0, 0)` at the first steps of the bottom layers. Seeds for a cell
//! live at its left/bottom boundary:
//!
//! * `l_ckpt[(i, j)]`, `j >= 1`: the input rows of layer block `j`'s bottom
//!   layer over sequence block `i`. For `j == 0` the retained input sequence
//!   plays this role.
//! * `s_ckpt[(i, j)]`, `i >= 1`: the state of every layer in block `j` just
//!   before the first step of sequence block `i`. For `i == 0` the seeds are
//!   the implicit zero states.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ledger::{ActivationLedger, Tag};
use crate::model::{GradientBundle, SsdModel, StepEvalCounter};
use crate::scalar::Scalar;
use crate::ssd::{chunk_backward_into, chunk_forward, replay_elements, ChunkCache, LayerState};
use crate::tensor::Tensor;

use super::plan::CheckpointPlan;

#[derive(Debug, Clone)]
pub struct GridStore<T> {
    pub plan: CheckpointPlan,
    pub layers: usize,
    pub seq_len: usize,
    pub l_ckpt: BTreeMap<(usize, usize), Tensor<T>>,
    pub s_ckpt: BTreeMap<(usize, usize), Vec<LayerState<T>>>,
    pub input_seq: Tensor<T>,
    /// `(sequence blocks, layer blocks)`
    pub num_cells: (usize, usize),
}

impl<T: Scalar> GridStore<T> {
    /// Stored layer-input positions; `S * (ceil(L/l) - 1)` after a forward.
    pub fn l_ckpt_positions(&self) -> usize {
        self.l_ckpt.values().map(|t| t.rows()).sum()
    }

    /// Stored layer states; `L * (ceil(S/s) - 1)` after a forward.
    pub fn s_ckpt_states(&self) -> usize {
        self.s_ckpt.values().map(|v| v.len()).sum()
    }

    /// Releases everything the store holds without running a backward.
    pub fn discard(self, ledger: &mut ActivationLedger) -> Result<()> {
        let d = self.input_seq.row_len();
        let sl = self.s_ckpt.values().flatten().next().map_or(0, |h| h.len());
        ledger.release_elems::<T>(Tag::LCkpt, self.l_ckpt_positions() * d)?;
        ledger.release_elems::<T>(Tag::SCkpt, self.s_ckpt_states() * sl)?;
        ledger.release_elems::<T>(Tag::Io, self.input_seq.len())?;
        Ok(())
    }
}

/// Forward pass that keeps only the two checkpoint families.
///
/// Outputs are bitwise identical to the full-cache forward: every layer sees
/// the same per-step operations in the same order, only grouped by cell.
#[allow(clippy::type_complexity)]
pub fn forward_checkpointed<T: Scalar>(
    model: &SsdModel<T>,
    x_seq: &Tensor<T>,
    plan: &CheckpointPlan,
    ledger: &mut ActivationLedger,
    counter: &mut StepEvalCounter,
) -> Result<(Tensor<T>, Vec<LayerState<T>>, GridStore<T>)> {
    let seq_len = model.check_input(x_seq)?;
    let nl = model.num_layers();
    plan.validate(nl, seq_len)?;
    let (d, sl) = (model.d_model(), model.state_len());
    let (n_seq, n_lay) = plan.num_cells(nl, seq_len);

    ledger.charge_elems::<T>(Tag::Io, x_seq.len())?;
    let mut store = GridStore {
        plan: *plan,
        layers: nl,
        seq_len,
        l_ckpt: BTreeMap::new(),
        s_ckpt: BTreeMap::new(),
        input_seq: x_seq.clone(),
        num_cells: (n_seq, n_lay),
    };

    ledger.charge_elems::<T>(Tag::Frontier, nl * sl)?;
    let mut states = model.zero_states();
    let mut y_seq = Tensor::zeros(&[seq_len, d]);

    for i in 0..n_seq {
        let rows = plan.seq_block(i, seq_len);
        let len = rows.len();
        ledger.charge_elems::<T>(Tag::Frontier, len * d)?;
        let mut x = x_seq.slice_rows(rows.clone());
        for j in 0..n_lay {
            let block = plan.layer_block(j, nl);
            if j > 0 {
                ledger.charge_elems::<T>(Tag::LCkpt, len * d)?;
                store.l_ckpt.insert((i, j), x.clone());
            }
            if i > 0 {
                ledger.charge_elems::<T>(Tag::SCkpt, block.len() * sl)?;
                store.s_ckpt.insert((i, j), states[block.clone()].to_vec());
            }
            for k in block {
                ledger.charge_elems::<T>(Tag::Frontier, len * d)?;
                let out = chunk_forward(&model.layers[k], &x, &states[k], false)?;
                counter.forward_evals += len as u64;
                states[k] = out.h_out;
                ledger.release_elems::<T>(Tag::Frontier, len * d)?;
                x = out.y;
            }
        }
        y_seq.write_rows(rows.start, &x);
        ledger.release_elems::<T>(Tag::Frontier, len * d)?;
    }
    ledger.release_elems::<T>(Tag::Frontier, nl * sl)?;
    Ok((y_seq, states, store))
}

/// Retained internals of every layer of one grid cell, bottom layer first.
#[derive(Debug, Clone)]
pub struct CellCache<T> {
    pub cell: (usize, usize),
    pub layers: Vec<ChunkCache<T>>,
}

impl<T: Scalar> CellCache<T> {
    pub fn elements(&self) -> usize {
        self.layers.iter().map(|c| c.elements()).sum()
    }
}

/// Re-runs the forward over one cell from its checkpoints, retaining every
/// per-step internal. Charges the cache to `ledger` as `cell_cache`.
pub fn recompute_cell<T: Scalar>(
    model: &SsdModel<T>,
    grids: &GridStore<T>,
    cell: (usize, usize),
    ledger: &mut ActivationLedger,
    counter: &mut StepEvalCounter,
) -> Result<CellCache<T>> {
    let (i, j) = cell;
    let (n_seq, n_lay) = grids.num_cells;
    if i >= n_seq || j >= n_lay {
        return Err(Error::Plan(format!(
            "cell ({i}, {j}) outside the {n_seq} x {n_lay} grid"
        )));
    }
    let plan = &grids.plan;
    let rows = plan.seq_block(i, grids.seq_len);
    let block = plan.layer_block(j, grids.layers);
    let len = rows.len();

    let mut x = if j == 0 {
        grids.input_seq.slice_rows(rows)
    } else {
        grids
            .l_ckpt
            .get(&(i, j))
            .cloned()
            .ok_or(Error::MissingCheckpoint {
                family: "layer-axis",
                seq_block: i,
                layer_block: j,
            })?
    };
    let seeds = if i == 0 {
        vec![LayerState::zeros(model.state_len()); block.len()]
    } else {
        grids
            .s_ckpt
            .get(&(i, j))
            .cloned()
            .ok_or(Error::MissingCheckpoint {
                family: "sequence-axis",
                seq_block: i,
                layer_block: j,
            })?
    };

    ledger.charge_elems::<T>(Tag::CellCache, block.len() * len * model.cache_elems_per_step())?;
    let mut layers = Vec::with_capacity(block.len());
    for (k, seed) in block.zip(&seeds) {
        let out = chunk_forward(&model.layers[k], &x, seed, true)?;
        counter.recompute_evals += len as u64;
        layers.push(out.cache.expect("retained chunk carries a cache"));
        x = out.y;
    }
    Ok(CellCache { cell, layers })
}

/// Backward pass over the grid: sequence blocks last to first, layer blocks
/// top to bottom within each. Each cell is recomputed from its checkpoints,
/// differentiated, and released before the next one starts.
pub fn backward_grid<T: Scalar>(
    model: &SsdModel<T>,
    mut grids: GridStore<T>,
    grad_y_seq: &Tensor<T>,
    grad_state: &[LayerState<T>],
    plan: &CheckpointPlan,
    ledger: &mut ActivationLedger,
    counter: &mut StepEvalCounter,
) -> Result<GradientBundle<T>> {
    if *plan != grids.plan || grids.layers != model.num_layers() {
        return Err(Error::Plan(format!(
            "backward plan {plan:?} does not match the forward plan {:?}",
            grids.plan
        )));
    }
    let (nl, seq_len) = (grids.layers, grids.seq_len);
    let (d, sl) = (model.d_model(), model.state_len());
    grad_y_seq.expect_shape(&[seq_len, d])?;
    if grad_state.len() != nl || grad_state.iter().any(|g| g.len() != sl) {
        return Err(Error::shape(&[nl, sl], &[grad_state.len()]));
    }
    let (n_seq, n_lay) = grids.num_cells;
    let per_step = model.cache_elems_per_step();

    let mut bundle = GradientBundle::zeros(model, seq_len);
    ledger.charge_elems::<T>(Tag::Frontier, nl * sl)?;
    let mut grad_h = grad_state.to_vec();

    for i in (0..n_seq).rev() {
        let rows = plan.seq_block(i, seq_len);
        let len = rows.len();
        ledger.charge_elems::<T>(Tag::Frontier, len * d)?;
        let mut gx = grad_y_seq.slice_rows(rows.clone());

        for j in (0..n_lay).rev() {
            let block = plan.layer_block(j, nl);
            let mut cell = recompute_cell(model, &grids, (i, j), ledger, counter)?;
            for k in block.clone().rev() {
                let layer = &model.layers[k];
                let cache = cell.layers.pop().expect("one cache per layer in the block");
                ledger.charge_elems::<T>(Tag::CellCache, replay_elements(layer, len))?;
                ledger.charge_elems::<T>(Tag::Frontier, len * d)?;
                let below = chunk_backward_into(layer, &cache, &gx, &mut grad_h[k], &mut bundle.layers[k])?;
                ledger.release_elems::<T>(Tag::CellCache, replay_elements(layer, len))?;
                ledger.release_elems::<T>(Tag::Frontier, len * d)?;
                ledger.release_elems::<T>(Tag::CellCache, len * per_step)?;
                gx = below;
            }
            if grids.l_ckpt.remove(&(i, j)).is_some() {
                ledger.release_elems::<T>(Tag::LCkpt, len * d)?;
            }
            if grids.s_ckpt.remove(&(i, j)).is_some() {
                ledger.release_elems::<T>(Tag::SCkpt, block.len() * sl)?;
            }
        }
        bundle.input.write_rows(rows.start, &gx);
        ledger.release_elems::<T>(Tag::Frontier, len * d)?;
    }
    ledger.release_elems::<T>(Tag::Io, grids.input_seq.len())?;
    ledger.release_elems::<T>(Tag::Frontier, nl * sl)?;
    Ok(bundle)
}
