//! Logical accounting of live activation storage.
//!
//! The ledger counts bytes of retained activation buffers rather than
//! resident memory, so two runs with the same schedule report the same
//! numbers. Parameters and parameter gradients are never charged.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    LCkpt,
    SCkpt,
    CellCache,
    Frontier,
    Io,
    FullCache,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::LCkpt,
        Tag::SCkpt,
        Tag::CellCache,
        Tag::Frontier,
        Tag::Io,
        Tag::FullCache,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::LCkpt => "l_ckpt",
            Tag::SCkpt => "s_ckpt",
            Tag::CellCache => "cell_cache",
            Tag::Frontier => "frontier",
            Tag::Io => "io",
            Tag::FullCache => "full_cache",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("release of {requested} bytes from `{tag}` exceeds its subtotal of {available}")]
    OverRelease {
        tag: Tag,
        requested: u64,
        available: u64,
    },
    #[error("charging {requested} bytes to `{tag}` would exceed the budget ({overhead} of {budget} bytes in use)")]
    BudgetExceeded {
        tag: Tag,
        requested: u64,
        overhead: u64,
        budget: u64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct ActivationLedger {
    live: u64,
    peak: u64,
    baseline: u64,
    subtotals: [u64; 6],
    budget: Option<u64>,
}

/// Two-step measurement: the live total when the run started and the peak
/// reached while it ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub baseline: u64,
    pub peak: u64,
    pub overhead: u64,
    pub leak: bool,
}

/// JSON-facing form of a [`Measurement`] tagged with the run it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub strategy: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "S")]
    pub seq_len: usize,
    pub l: usize,
    pub s: usize,
    pub baseline: u64,
    pub peak: u64,
    pub overhead: u64,
    pub leak: bool,
}

impl ActivationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger that refuses charges pushing `live - baseline` above `budget`.
    pub fn with_budget(budget: u64) -> Self {
        Self {
            budget: Some(budget),
            ..Self::default()
        }
    }

    pub fn set_budget(&mut self, budget: Option<u64>) {
        self.budget = budget;
    }

    pub fn live(&self) -> u64 {
        self.live
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn baseline(&self) -> u64 {
        self.baseline
    }

    pub fn subtotal(&self, tag: Tag) -> u64 {
        self.subtotals[tag.index()]
    }

    pub fn charge(&mut self, tag: Tag, bytes: u64) -> Result<(), LedgerError> {
        if let Some(budget) = self.budget {
            let overhead = self.live.saturating_sub(self.baseline);
            if overhead + bytes > budget {
                return Err(LedgerError::BudgetExceeded {
                    tag,
                    requested: bytes,
                    overhead,
                    budget,
                });
            }
        }
        self.subtotals[tag.index()] += bytes;
        self.live += bytes;
        self.peak = self.peak.max(self.live);
        self.audit();
        Ok(())
    }

    pub fn release(&mut self, tag: Tag, bytes: u64) -> Result<(), LedgerError> {
        let available = self.subtotals[tag.index()];
        if bytes > available {
            return Err(LedgerError::OverRelease {
                tag,
                requested: bytes,
                available,
            });
        }
        self.subtotals[tag.index()] -= bytes;
        self.live -= bytes;
        self.audit();
        Ok(())
    }

    /// Charges `elements` values of scalar type `T`.
    pub fn charge_elems<T: Scalar>(&mut self, tag: Tag, elements: usize) -> Result<(), LedgerError> {
        self.charge(tag, (elements * T::BYTES) as u64)
    }

    pub fn release_elems<T: Scalar>(&mut self, tag: Tag, elements: usize) -> Result<(), LedgerError> {
        self.release(tag, (elements * T::BYTES) as u64)
    }

    /// Runs `run` with the current live total as baseline and reports the
    /// peak reached during it. `leak` is set when `run` leaves charges behind.
    pub fn measure<R>(&mut self, run: impl FnOnce(&mut Self) -> R) -> (R, Measurement) {
        self.baseline = self.live;
        self.peak = self.live;
        let out = run(self);
        let m = Measurement {
            baseline: self.baseline,
            peak: self.peak,
            overhead: self.peak - self.baseline,
            leak: self.live != self.baseline,
        };
        (out, m)
    }

    /// Checks that the subtotals add up to the live total.
    pub fn is_consistent(&self) -> bool {
        self.subtotals.iter().sum::<u64>() == self.live && self.peak >= self.live
    }

    #[inline]
    fn audit(&self) {
        debug_assert!(self.is_consistent(), "ledger conservation violated: {self:?}");
    }
}
