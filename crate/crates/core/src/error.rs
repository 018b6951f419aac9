use thiserror::Error;

use crate::ledger::LedgerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid checkpoint plan: {0}")]
    Plan(String),
    #[error("missing {family} checkpoint for cell ({seq_block}, {layer_block})")]
    MissingCheckpoint {
        family: &'static str,
        seq_block: usize,
        layer_block: usize,
    },
    #[error("cache does not match the requested backward: {0}")]
    Cache(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
