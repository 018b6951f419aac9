use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequence-interval granularity used when long sequences must keep the
/// sequence interval aligned to the scan block size.
pub const COARSE_GRANULARITY: usize = 256;

/// Checkpoint intervals along the layer axis (`l`) and the sequence axis (`s`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckpointPlan {
    pub layer_interval: usize,
    pub seq_interval: usize,
    pub granularity: usize,
}

impl CheckpointPlan {
    pub fn new(layer_interval: usize, seq_interval: usize) -> Self {
        Self {
            layer_interval,
            seq_interval,
            granularity: 1,
        }
    }

    pub fn with_granularity(mut self, granularity: usize) -> Self {
        self.granularity = granularity;
        self
    }

    /// Granularity to use for a sequence of length `seq_len`: 256 once the
    /// sequence reaches 256 steps when `coarse`, else 1.
    pub fn granularity_for(seq_len: usize, coarse: bool) -> usize {
        if coarse && seq_len >= COARSE_GRANULARITY {
            COARSE_GRANULARITY
        } else {
            1
        }
    }

    pub fn validate(&self, layers: usize, seq_len: usize) -> Result<()> {
        let (l, s, g) = (self.layer_interval, self.seq_interval, self.granularity);
        if l == 0 || l > layers {
            return Err(Error::Plan(format!("layer interval {l} outside [1, {layers}]")));
        }
        if s == 0 || s > seq_len {
            return Err(Error::Plan(format!("sequence interval {s} outside [1, {seq_len}]")));
        }
        if g == 0 || s % g != 0 {
            return Err(Error::Plan(format!(
                "sequence interval {s} is not a multiple of granularity {g}"
            )));
        }
        Ok(())
    }

    /// `(ceil(S / s), ceil(L / l))`
    pub fn num_cells(&self, layers: usize, seq_len: usize) -> (usize, usize) {
        (
            seq_len.div_ceil(self.seq_interval),
            layers.div_ceil(self.layer_interval),
        )
    }

    /// Steps covered by sequence block `i` (0-based); the last block may be short.
    pub fn seq_block(&self, i: usize, seq_len: usize) -> Range<usize> {
        let start = i * self.seq_interval;
        start..(start + self.seq_interval).min(seq_len)
    }

    /// Layers covered by layer block `j` (0-based, bottom first).
    pub fn layer_block(&self, j: usize, layers: usize) -> Range<usize> {
        let start = j * self.layer_interval;
        start..(start + self.layer_interval).min(layers)
    }
}
