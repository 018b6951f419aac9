use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Stack geometry.
///
/// `d_model` must equal `heads * head_dim`; each head carries an
/// `state_dim x head_dim` recurrent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    pub max_seq: usize,
    pub precision: Precision,
    pub residual: bool,
}

impl ModelConfig {
    /// Geometry with `d_model` split evenly over `heads`.
    pub fn new(layers: usize, d_model: usize, heads: usize, state_dim: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let cfg = Self {
            layers,
            d_model,
            heads,
            head_dim: d_model / heads,
            state_dim,
            max_seq: 1 << 20,
            precision: Precision::F64,
            residual: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_seq(mut self, max_seq: usize) -> Self {
        self.max_seq = max_seq;
        self
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("layer count must be at least 1");
        }
        if self.heads == 0 || self.head_dim == 0 || self.state_dim == 0 {
            return bad("heads, head_dim and state_dim must be at least 1");
        }
        if self.d_model != self.heads * self.head_dim {
            return Err(Error::Config(format!(
                "d_model {} != heads {} * head_dim {}",
                self.d_model, self.heads, self.head_dim
            )));
        }
        if self.max_seq == 0 {
            return bad("max_seq must be at least 1");
        }
        Ok(())
    }

    /// Elements in one layer's recurrent state (`H * N * P`).
    pub fn state_len(&self) -> usize {
        self.heads * self.state_dim * self.head_dim
    }

    /// Elements a retained chunk cache holds per (layer, step),
    /// `d + H + 2*H*N`.
    pub fn cache_len_per_step(&self) -> usize {
        self.d_model + self.heads + 2 * self.heads * self.state_dim
    }
}
