//! Selective linear-recurrence (SSD) layer.
//!
//! Per head, with `x` the head's slice of the layer input:
//!
//! ```text
//! delta_t = softplus(w_delta . x + b_delta)
//! a_t     = exp(-delta_t)               (scalar decay, A_t = a_t * I)
//! B_t     = W_B x + b_B                 (length N)
//! C_t     = W_C x + b_C                 (length N)
//! h_t     = a_t * h_{t-1} + B_t (x) x   (N x P outer product)
//! y       = C_t^T h_t  (+ x when residual)
//! ```
//!
//! The recurrence in `h` is linear; the only nonlinearity is the decay
//! projection. A retained [`ChunkCache`] keeps the per-step layer input and
//! projections; the state trajectory is replayed from the chunk's seed state
//! inside [`chunk_backward`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::{softplus, Scalar};
use crate::tensor::Tensor;

/// Parameters of one SSD layer. Also used as the shape of its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdLayerParams<T> {
    pub heads: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    /// `[head][p]`
    pub w_delta: Vec<T>,
    /// `[head]`
    pub b_delta: Vec<T>,
    /// `[head][n][p]`
    pub w_b: Vec<T>,
    /// `[head][n]`
    pub b_b: Vec<T>,
    /// `[head][n][p]`
    pub w_c: Vec<T>,
    /// `[head][n]`
    pub b_c: Vec<T>,
    pub residual: bool,
}

/// Standard deviation multiplier applied on top of `1/sqrt(fan_in)` for the
/// B/C projections. Keeps the cubic input dependence of deep stacks bounded.
pub const BC_INIT_GAIN: f64 = 0.05;

/// Range of `softplus(b_delta)` at initialization.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

impl<T: Scalar> SsdLayerParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (h, p, n) = (cfg.heads, cfg.head_dim, cfg.state_dim);
        Self {
            heads: h,
            head_dim: p,
            state_dim: n,
            w_delta: vec![T::zero(); h * p],
            b_delta: vec![T::zero(); h],
            w_b: vec![T::zero(); h * n * p],
            b_b: vec![T::zero(); h * n],
            w_c: vec![T::zero(); h * n * p],
            b_c: vec![T::zero(); h * n],
            residual: cfg.residual,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads,
            head_dim: self.head_dim,
            state_dim: self.state_dim,
            w_delta: vec![T::zero(); self.w_delta.len()],
            b_delta: vec![T::zero(); self.b_delta.len()],
            w_b: vec![T::zero(); self.w_b.len()],
            b_b: vec![T::zero(); self.b_b.len()],
            w_c: vec![T::zero(); self.w_c.len()],
            b_c: vec![T::zero(); self.b_c.len()],
            residual: self.residual,
        }
    }

    /// Draws a layer from `rng`. Weights are zero-mean normal with
    /// `1/sqrt(fan_in)` scale; the decay bias is set so `softplus(b_delta)`
    /// is log-uniform in [`DELTA_INIT_RANGE`]; B/C biases start at zero.
    pub fn random<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let fan_in = (cfg.head_dim as f64).sqrt().recip();
        let mut normal = |scale: f64| -> T {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(z * scale)
        };
        p.w_delta.iter_mut().for_each(|w| *w = normal(fan_in));
        p.w_b.iter_mut().for_each(|w| *w = normal(fan_in * BC_INIT_GAIN));
        p.w_c.iter_mut().for_each(|w| *w = normal(fan_in * BC_INIT_GAIN));
        let (lo, hi) = DELTA_INIT_RANGE;
        for b in p.b_delta.iter_mut() {
            let u: f64 = rng.random();
            let delta = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
            // inverse softplus
            *b = T::from_f64_lossy(delta.exp_m1().ln());
        }
        p
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [
            &self.w_delta,
            &self.b_delta,
            &self.w_b,
            &self.b_b,
            &self.w_c,
            &self.b_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            &mut self.w_delta,
            &mut self.b_delta,
            &mut self.w_b,
            &mut self.b_b,
            &mut self.w_c,
            &mut self.b_c,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn state_len(&self) -> usize {
        self.heads * self.state_dim * self.head_dim
    }

    fn per_step_cache_len(&self) -> usize {
        self.d_model() + self.heads + 2 * self.heads * self.state_dim
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Recurrent state of one layer, laid out `[head][n][p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub h: Vec<T>,
}

impl<T: Scalar> LayerState<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            h: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite())
    }
}

/// Per-step selective coefficients for every head.
#[derive(Debug, Clone, PartialEq)]
pub struct Selective<T> {
    /// decay per head, in (0, 1)
    pub a: Vec<T>,
    /// `[head][n]`
    pub b: Vec<T>,
    /// `[head][n]`
    pub c: Vec<T>,
}

pub fn project_selective<T: Scalar>(params: &SsdLayerParams<T>, x: &[T]) -> Result<Selective<T>> {
    if x.len() != params.d_model() {
        return Err(Error::shape(&[params.d_model()], &[x.len()]));
    }
    let (h, n) = (params.heads, params.state_dim);
    let mut sel = Selective {
        a: vec![T::zero(); h],
        b: vec![T::zero(); h * n],
        c: vec![T::zero(); h * n],
    };
    project_into(params, x, &mut sel.a, &mut sel.b, &mut sel.c);
    Ok(sel)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Writes `a` (len H), `b`, `c` (len H*N) for input row `x`.
#[inline]
fn project_into<T: Scalar>(params: &SsdLayerParams<T>, x: &[T], a: &mut [T], b: &mut [T], c: &mut [T]) {
    let (p, n) = (params.head_dim, params.state_dim);
    for hd in 0..params.heads {
        let xh = &x[hd * p..(hd + 1) * p];
        let z = dot(&params.w_delta[hd * p..(hd + 1) * p], xh) + params.b_delta[hd];
        a[hd] = (-softplus(z)).exp();
        for k in 0..n {
            let row = (hd * n + k) * p;
            b[hd * n + k] = dot(&params.w_b[row..row + p], xh) + params.b_b[hd * n + k];
            c[hd * n + k] = dot(&params.w_c[row..row + p], xh) + params.b_c[hd * n + k];
        }
    }
}

/// `h <- a * h + B (x) x`, per head.
#[inline]
fn advance_state<T: Scalar>(heads: usize, n: usize, p: usize, a: &[T], b: &[T], x: &[T], h: &mut [T]) {
    for hd in 0..heads {
        let xh = &x[hd * p..(hd + 1) * p];
        let ah = a[hd];
        for k in 0..n {
            let bk = b[hd * n + k];
            let row = &mut h[(hd * n + k) * p..(hd * n + k + 1) * p];
            for (hv, xv) in row.iter_mut().zip(xh) {
                *hv = ah * *hv + bk * *xv;
            }
        }
    }
}

/// `y = C^T h` per head, plus `x` when residual.
#[inline]
#[allow(clippy::too_many_arguments)]
fn readout<T: Scalar>(
    heads: usize,
    n: usize,
    p: usize,
    c: &[T],
    h: &[T],
    x: &[T],
    residual: bool,
    y: &mut [T],
) {
    for hd in 0..heads {
        for q in 0..p {
            let mut acc = T::zero();
            for k in 0..n {
                acc += c[hd * n + k] * h[(hd * n + k) * p + q];
            }
            y[hd * p + q] = if residual { acc + x[hd * p + q] } else { acc };
        }
    }
}

/// One recurrence step with externally supplied coefficients.
pub fn ssd_step<T: Scalar>(
    params: &SsdLayerParams<T>,
    sel: &Selective<T>,
    x: &[T],
    h_prev: &LayerState<T>,
) -> Result<(Vec<T>, LayerState<T>)> {
    let (heads, n, p) = (params.heads, params.state_dim, params.head_dim);
    if x.len() != heads * p {
        return Err(Error::shape(&[heads * p], &[x.len()]));
    }
    if h_prev.len() != heads * n * p {
        return Err(Error::shape(&[heads, n, p], &[h_prev.len()]));
    }
    if sel.a.len() != heads || sel.b.len() != heads * n || sel.c.len() != heads * n {
        return Err(Error::shape(&[heads, n], &[sel.a.len(), sel.b.len(), sel.c.len()]));
    }
    let mut h = h_prev.clone();
    advance_state(heads, n, p, &sel.a, &sel.b, x, &mut h.h);
    let mut y = vec![T::zero(); heads * p];
    readout(heads, n, p, &sel.c, &h.h, x, params.residual, &mut y);
    Ok((y, h))
}

/// Per-step internals retained by a forward chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkCache<T> {
    pub steps: usize,
    /// layer inputs, `[t][d]`
    pub x: Vec<T>,
    /// `[t][head]`
    pub a: Vec<T>,
    /// `[t][head][n]`
    pub b: Vec<T>,
    /// `[t][head][n]`
    pub c: Vec<T>,
    /// state entering the chunk; the backward replays `h_t` from it
    pub h_in: LayerState<T>,
}

impl<T: Scalar> ChunkCache<T> {
    /// Retained elements excluding the seed state (which aliases a
    /// checkpoint or the implicit zero state).
    pub fn elements(&self) -> usize {
        self.x.len() + self.a.len() + self.b.len() + self.c.len()
    }
}

#[derive(Debug, Clone)]
pub struct ChunkOutput<T> {
    pub y: Tensor<T>,
    pub h_out: LayerState<T>,
    pub cache: Option<ChunkCache<T>>,
}

/// Runs `x_block.rows()` sequential steps from `h_in`.
pub fn chunk_forward<T: Scalar>(
    params: &SsdLayerParams<T>,
    x_block: &Tensor<T>,
    h_in: &LayerState<T>,
    retain: bool,
) -> Result<ChunkOutput<T>> {
    let (heads, n, p) = (params.heads, params.state_dim, params.head_dim);
    let d = heads * p;
    let steps = x_block.rows();
    if steps == 0 || x_block.shape().len() != 2 || x_block.row_len() != d {
        return Err(Error::shape(&[steps.max(1), d], x_block.shape()));
    }
    if h_in.len() != heads * n * p {
        return Err(Error::shape(&[heads, n, p], &[h_in.len()]));
    }

    let mut y = Tensor::zeros(&[steps, d]);
    let mut h = h_in.clone();
    let mut cache = retain.then(|| ChunkCache {
        steps,
        x: x_block.data().to_vec(),
        a: vec![T::zero(); steps * heads],
        b: vec![T::zero(); steps * heads * n],
        c: vec![T::zero(); steps * heads * n],
        h_in: h_in.clone(),
    });
    let mut sa = vec![T::zero(); heads];
    let mut sb = vec![T::zero(); heads * n];
    let mut sc = vec![T::zero(); heads * n];

    for t in 0..steps {
        let x = x_block.row(t);
        let (a, b, c) = match cache.as_mut() {
            Some(cc) => (
                &mut cc.a[t * heads..(t + 1) * heads],
                &mut cc.b[t * heads * n..(t + 1) * heads * n],
                &mut cc.c[t * heads * n..(t + 1) * heads * n],
            ),
            None => (&mut sa[..], &mut sb[..], &mut sc[..]),
        };
        project_into(params, x, a, b, c);
        advance_state(heads, n, p, a, b, x, &mut h.h);
        readout(heads, n, p, c, &h.h, x, params.residual, y.row_mut(t));
    }
    Ok(ChunkOutput { y, h_out: h, cache })
}

/// Elements of the replayed state trajectory `chunk_backward` materializes
/// for a chunk of `steps` steps.
pub fn replay_elements<T: Scalar>(params: &SsdLayerParams<T>, steps: usize) -> usize {
    steps * params.state_len()
}

/// Adjoint of [`chunk_forward`].
///
/// Returns `(grad_x, grad_h_in, grad_params)` for the scalar
/// `<grad_y, y> + <grad_h_out, h_out>`.
pub fn chunk_backward<T: Scalar>(
    params: &SsdLayerParams<T>,
    cache: &ChunkCache<T>,
    grad_y: &Tensor<T>,
    grad_h_out: &LayerState<T>,
) -> Result<(Tensor<T>, LayerState<T>, SsdLayerParams<T>)> {
    let mut grad_h = grad_h_out.clone();
    let mut grads = params.zeros_like();
    let gx = chunk_backward_into(params, cache, grad_y, &mut grad_h, &mut grads)?;
    Ok((gx, grad_h, grads))
}

/// In-place form of [`chunk_backward`]: `grad_h` enters as the gradient at
/// the chunk's right boundary and leaves as the gradient at its left
/// boundary; parameter gradients are added into `grads` in time-descending
/// order.
pub fn chunk_backward_into<T: Scalar>(
    params: &SsdLayerParams<T>,
    cache: &ChunkCache<T>,
    grad_y: &Tensor<T>,
    grad_h: &mut LayerState<T>,
    grads: &mut SsdLayerParams<T>,
) -> Result<Tensor<T>> {
    let (heads, n, p) = (params.heads, params.state_dim, params.head_dim);
    let d = heads * p;
    let sl = heads * n * p;
    let steps = cache.steps;
    if grad_y.shape() != [steps, d] {
        return Err(Error::shape(&[steps, d], grad_y.shape()));
    }
    if cache.x.len() != steps * d
        || cache.a.len() != steps * heads
        || cache.b.len() != steps * heads * n
        || cache.c.len() != steps * heads * n
        || cache.h_in.len() != sl
    {
        return Err(Error::Cache(format!(
            "cache built for a different layer geometry (steps {steps}, d {d})"
        )));
    }
    if grad_h.len() != sl {
        return Err(Error::shape(&[heads, n, p], &[grad_h.len()]));
    }

    // replay h_1..h_T from the seed state
    let mut states = vec![T::zero(); steps * sl];
    let mut h = cache.h_in.h.clone();
    for t in 0..steps {
        advance_state(
            heads,
            n,
            p,
            &cache.a[t * heads..(t + 1) * heads],
            &cache.b[t * heads * n..(t + 1) * heads * n],
            &cache.x[t * d..(t + 1) * d],
            &mut h,
        );
        states[t * sl..(t + 1) * sl].copy_from_slice(&h);
    }

    let mut grad_x = Tensor::zeros(&[steps, d]);
    let mut g_b = vec![T::zero(); n];
    let mut g_c = vec![T::zero(); n];
    let one = T::one();

    for t in (0..steps).rev() {
        let x = &cache.x[t * d..(t + 1) * d];
        let h_t = &states[t * sl..(t + 1) * sl];
        let h_prev = if t == 0 {
            &cache.h_in.h[..]
        } else {
            &states[(t - 1) * sl..t * sl]
        };
        let gy = grad_y.row(t);
        let gx = grad_x.row_mut(t);

        for hd in 0..heads {
            let xh = &x[hd * p..(hd + 1) * p];
            let gyh = &gy[hd * p..(hd + 1) * p];
            let a = cache.a[t * heads + hd];
            let bv = &cache.b[(t * heads + hd) * n..(t * heads + hd + 1) * n];
            let cv = &cache.c[(t * heads + hd) * n..(t * heads + hd + 1) * n];
            let gh = &mut grad_h.h[hd * n * p..(hd + 1) * n * p];
            let ht = &h_t[hd * n * p..(hd + 1) * n * p];
            let hp = &h_prev[hd * n * p..(hd + 1) * n * p];

            // readout
            for k in 0..n {
                let row = k * p..(k + 1) * p;
                g_c[k] = dot(gyh, &ht[row.clone()]);
                for (g, gyv) in gh[row].iter_mut().zip(gyh) {
                    *g += cv[k] * *gyv;
                }
            }

            // state update
            let g_a = dot(gh, hp);
            let gxh = &mut gx[hd * p..(hd + 1) * p];
            for k in 0..n {
                let row = &gh[k * p..(k + 1) * p];
                g_b[k] = dot(row, xh);
                for (gxv, g) in gxh.iter_mut().zip(row) {
                    *gxv += *g * bv[k];
                }
            }
            gh.iter_mut().for_each(|g| *g *= a);

            // decay projection: da/dz = -a * sigmoid(z) = -a * (1 - a)
            let g_z = -(g_a * a * (one - a));
            let wd = &params.w_delta[hd * p..(hd + 1) * p];
            for q in 0..p {
                grads.w_delta[hd * p + q] += g_z * xh[q];
                gxh[q] += g_z * wd[q];
            }
            grads.b_delta[hd] += g_z;

            // B and C projections
            for k in 0..n {
                let row = (hd * n + k) * p;
                let (gbk, gck) = (g_b[k], g_c[k]);
                for q in 0..p {
                    grads.w_b[row + q] += gbk * xh[q];
                    grads.w_c[row + q] += gck * xh[q];
                    gxh[q] += params.w_b[row + q] * gbk + params.w_c[row + q] * gck;
                }
                grads.b_b[hd * n + k] += gbk;
                grads.b_c[hd * n + k] += gck;
            }

            if params.residual {
                for (gxv, gyv) in gxh.iter_mut().zip(gyh) {
                    *gxv += *gyv;
                }
            }
        }
    }
    Ok(grad_x)
}

pub(crate) fn cache_elements_per_step<T: Scalar>(params: &SsdLayerParams<T>) -> usize {
    params.per_step_cache_len()
}
