//! Fixed-parameter recurrent cell, kept as the reference point for the SSD
//! layer: with the identity activation it is the SSD recurrence with
//! constant coefficients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayerParams<T> {
    pub state_dim: usize,
    /// `N x N`, row-major
    pub a: Vec<T>,
    /// `N x 1`
    pub b: Vec<T>,
    /// `1 x N`
    pub c: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> RnnLayerParams<T> {
    pub fn new(state_dim: usize, a: Vec<T>, b: Vec<T>, c: Vec<T>, activation: Activation) -> Result<Self> {
        let n = state_dim;
        if n == 0 || a.len() != n * n || b.len() != n || c.len() != n {
            return Err(Error::shape(&[n * n, n, n], &[a.len(), b.len(), c.len()]));
        }
        if a.iter().chain(&b).chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rnn parameters".into()));
        }
        Ok(Self {
            state_dim,
            a,
            b,
            c,
            activation,
        })
    }
}

/// `h_t = sigma(A h_{t-1} + B x_t)`, `y_t = sigma(C h_t)`.
pub fn rnn_step<T: Scalar>(params: &RnnLayerParams<T>, x: T, h_prev: &[T]) -> Result<(T, Vec<T>)> {
    let n = params.state_dim;
    if h_prev.len() != n {
        return Err(Error::shape(&[n], &[h_prev.len()]));
    }
    let h: Vec<T> = (0..n)
        .map(|i| {
            let mut acc = T::zero();
            for (aij, hj) in params.a[i * n..(i + 1) * n].iter().zip(h_prev) {
                acc += *aij * *hj;
            }
            params.activation.apply(acc + params.b[i] * x)
        })
        .collect();
    let mut y = T::zero();
    for (ci, hi) in params.c.iter().zip(&h) {
        y += *ci * *hi;
    }
    Ok((params.activation.apply(y), h))
}
