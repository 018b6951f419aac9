//! Layer stack with the full-cache reference forward/backward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::ledger::{ActivationLedger, Tag};
use crate::scalar::Scalar;
use crate::ssd::{
    cache_elements_per_step, chunk_backward_into, chunk_forward, replay_elements, ChunkCache,
    LayerState, SsdLayerParams,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SsdModel<T> {
    pub config: ModelConfig,
    pub layers: Vec<SsdLayerParams<T>>,
}

/// Deterministic parameter stack for `(config, seed)`.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<SsdModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..config.layers)
        .map(|_| SsdLayerParams::random(config, &mut rng))
        .collect();
    Ok(SsdModel {
        config: *config,
        layers,
    })
}

impl<T: Scalar> SsdModel<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn state_len(&self) -> usize {
        self.config.state_len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn zero_states(&self) -> Vec<LayerState<T>> {
        vec![LayerState::zeros(self.state_len()); self.num_layers()]
    }

    /// Elements a retained cache holds per (layer, step).
    pub fn cache_elems_per_step(&self) -> usize {
        self.layers
            .first()
            .map(cache_elements_per_step)
            .unwrap_or_else(|| self.config.cache_len_per_step())
    }

    pub(crate) fn check_input(&self, x_seq: &Tensor<T>) -> Result<usize> {
        let d = self.d_model();
        if x_seq.shape().len() != 2 || x_seq.row_len() != d {
            return Err(Error::shape(&[x_seq.rows(), d], x_seq.shape()));
        }
        let s = x_seq.rows();
        if s > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: s,
                max: self.config.max_seq,
            });
        }
        Ok(s)
    }
}

/// Exact count of (layer, step) evaluations in a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepEvalCounter {
    pub forward_evals: u64,
    pub recompute_evals: u64,
}

impl StepEvalCounter {
    pub fn total(&self) -> u64 {
        self.forward_evals + self.recompute_evals
    }
}

/// Gradients of one run: per-layer parameter gradients and the gradient with
/// respect to the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    pub layers: Vec<SsdLayerParams<T>>,
    pub input: Tensor<T>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros(model: &SsdModel<T>, seq_len: usize) -> Self {
        Self {
            layers: model.layers.iter().map(|l| l.zeros_like()).collect(),
            input: Tensor::zeros(&[seq_len, model.d_model()]),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.layers
            .iter()
            .zip(&other.layers)
            .fold(self.input.max_abs_diff(&other.input), |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn is_finite(&self) -> bool {
        self.input.is_finite() && self.layers.iter().all(|l| l.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.input.data().iter().all(|v| v.is_zero())
            && self
                .layers
                .iter()
                .all(|l| l.tensors().iter().all(|t| t.iter().all(|v| v.is_zero())))
    }
}

/// Every per-step internal of every layer.
#[derive(Debug, Clone)]
pub struct FullCache<T> {
    pub layers: Vec<ChunkCache<T>>,
    pub seq_len: usize,
}

/// Reference forward retaining all internals (no checkpointing).
#[allow(clippy::type_complexity)]
pub fn model_forward_full<T: Scalar>(
    model: &SsdModel<T>,
    x_seq: &Tensor<T>,
    ledger: &mut ActivationLedger,
    counter: &mut StepEvalCounter,
) -> Result<(Tensor<T>, Vec<LayerState<T>>, FullCache<T>)> {
    let s = model.check_input(x_seq)?;
    let per_layer = s * model.cache_elems_per_step();
    let mut caches = Vec::with_capacity(model.num_layers());
    let mut finals = Vec::with_capacity(model.num_layers());
    let mut x = x_seq.clone();
    for layer in &model.layers {
        ledger.charge_elems::<T>(Tag::FullCache, per_layer)?;
        let out = chunk_forward(layer, &x, &LayerState::zeros(model.state_len()), true)?;
        counter.forward_evals += s as u64;
        caches.push(out.cache.expect("retained chunk carries a cache"));
        finals.push(out.h_out);
        x = out.y;
    }
    Ok((
        x,
        finals,
        FullCache {
            layers: caches,
            seq_len: s,
        },
    ))
}

/// Reference adjoint: layers top-down, time backward within each layer.
pub fn model_backward_full<T: Scalar>(
    model: &SsdModel<T>,
    cache: FullCache<T>,
    grad_y_seq: &Tensor<T>,
    grad_final_states: &[LayerState<T>],
    ledger: &mut ActivationLedger,
) -> Result<GradientBundle<T>> {
    let (nl, s, d, sl) = (model.num_layers(), cache.seq_len, model.d_model(), model.state_len());
    if cache.layers.len() != nl {
        return Err(Error::Cache(format!(
            "full cache holds {} layers, model has {nl}",
            cache.layers.len()
        )));
    }
    grad_y_seq.expect_shape(&[s, d])?;
    if grad_final_states.len() != nl || grad_final_states.iter().any(|g| g.len() != sl) {
        return Err(Error::shape(&[nl, sl], &[grad_final_states.len()]));
    }

    let mut bundle = GradientBundle::zeros(model, s);
    ledger.charge_elems::<T>(Tag::Frontier, nl * sl + s * d)?;
    let mut grad_h: Vec<LayerState<T>> = grad_final_states.to_vec();
    let mut gy = grad_y_seq.clone();
    let mut caches = cache.layers;
    let per_layer = s * model.cache_elems_per_step();

    for k in (0..nl).rev() {
        let layer = &model.layers[k];
        let c = caches.pop().expect("one cache per layer");
        ledger.charge_elems::<T>(Tag::FullCache, replay_elements(layer, s))?;
        ledger.charge_elems::<T>(Tag::Frontier, s * d)?;
        let gx = chunk_backward_into(layer, &c, &gy, &mut grad_h[k], &mut bundle.layers[k])?;
        ledger.release_elems::<T>(Tag::FullCache, replay_elements(layer, s))?;
        ledger.release_elems::<T>(Tag::Frontier, s * d)?;
        drop(c);
        ledger.release_elems::<T>(Tag::FullCache, per_layer)?;
        gy = gx;
    }
    bundle.input = gy;
    ledger.release_elems::<T>(Tag::Frontier, nl * sl + s * d)?;
    Ok(bundle)
}

/// Mean squared error over every element, with its exact gradient
/// `2 (y - target) / n`.
pub fn loss_mse<T: Scalar>(y: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    target.expect_shape(y.shape())?;
    let n = T::from_usize(y.len()).expect("element count fits the scalar");
    let two = T::one() + T::one();
    let mut sum = T::zero();
    let mut grad = Tensor::zeros(y.shape());
    for ((g, yv), tv) in grad.data_mut().iter_mut().zip(y.data()).zip(target.data()) {
        let r = *yv - *tv;
        sum += r * r;
        *g = two * r / n;
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: usize, d: usize, h: usize, n: usize) -> ModelConfig {
        ModelConfig::new(l, d, h, n).unwrap()
    }

    fn input(s: usize, d: usize, salt: u64) -> Tensor<f64> {
        Tensor::from_fn(&[s, d], |i| (((i as u64 * 2654435761 + salt) % 1000) as f64 / 500.0) - 1.0)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let c = cfg(2, 4, 1, 2);
        let a = init_params::<f64>(&c, 42).unwrap();
        let b = init_params::<f64>(&c, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers[0].w_b.len(), 2 * 4);
        let s1 = init_params::<f64>(&c, 1).unwrap();
        let s2 = init_params::<f64>(&c, 2).unwrap();
        assert_ne!(s1, s2);
    }

    #[test]
    fn init_decay_bias_in_slow_range() {
        let m = init_params::<f64>(&cfg(8, 16, 4, 4), 9).unwrap();
        for l in &m.layers {
            for &b in &l.b_delta {
                let delta = crate::scalar::softplus(b);
                assert!((0.001 - 1e-12..=0.1 + 1e-12).contains(&delta), "delta {delta}");
            }
        }
    }

    #[test]
    fn single_layer_full_forward_is_one_chunk() {
        let m = init_params::<f64>(&cfg(1, 4, 2, 2), 3).unwrap();
        let x = input(10, 4, 1);
        let (y, finals, _) =
            model_forward_full(&m, &x, &mut ActivationLedger::new(), &mut StepEvalCounter::default()).unwrap();
        let out = chunk_forward(&m.layers[0], &x, &LayerState::zeros(m.state_len()), false).unwrap();
        assert_eq!(y, out.y);
        assert_eq!(finals[0], out.h_out);
    }

    #[test]
    fn full_forward_charges_every_position() {
        let m = init_params::<f64>(&cfg(3, 4, 2, 2), 3).unwrap();
        let x = input(16, 4, 2);
        let mut ledger = ActivationLedger::new();
        let mut counter = StepEvalCounter::default();
        let (y1, _, _) = model_forward_full(&m, &x, &mut ledger, &mut counter).unwrap();
        assert!(ledger.peak() >= (3 * 16 * m.cache_elems_per_step() * 8) as u64);
        assert_eq!(counter.forward_evals, 48);
        let (y2, _, _) = model_forward_full(&m, &x, &mut ActivationLedger::new(), &mut counter).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn rejects_overlong_sequence() {
        let c = cfg(1, 2, 1, 1).with_max_seq(4);
        let m = init_params::<f64>(&c, 0).unwrap();
        let err = model_forward_full(&m, &input(5, 2, 0), &mut ActivationLedger::new(), &mut StepEvalCounter::default());
        assert!(matches!(err, Err(Error::SequenceTooLong { len: 5, max: 4 })));
    }

    #[test]
    fn zero_upstream_gives_zero_bundle_and_no_leak() {
        let m = init_params::<f64>(&cfg(2, 4, 2, 2), 5).unwrap();
        let x = input(6, 4, 3);
        let mut ledger = ActivationLedger::new();
        let (bundle, meas) = ledger.measure(|ledger| {
            let (_, _, cache) = model_forward_full(&m, &x, ledger, &mut StepEvalCounter::default()).unwrap();
            model_backward_full(&m, cache, &Tensor::zeros(&[6, 4]), &m.zero_states(), ledger).unwrap()
        });
        assert!(bundle.is_zero());
        assert!(!meas.leak);
    }

    #[test]
    fn backward_is_bitwise_repeatable() {
        let m = init_params::<f64>(&cfg(2, 4, 2, 2), 5).unwrap();
        let x = input(9, 4, 4);
        let target = input(9, 4, 77);
        let run = || {
            let mut ledger = ActivationLedger::new();
            let (y, _, cache) = model_forward_full(&m, &x, &mut ledger, &mut StepEvalCounter::default()).unwrap();
            let (_, gy) = loss_mse(&y, &target).unwrap();
            model_backward_full(&m, cache, &gy, &m.zero_states(), &mut ledger).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mse_by_hand() {
        let y = Tensor::from_vec(&[1, 1], vec![2.0f64]).unwrap();
        let t = Tensor::from_vec(&[1, 1], vec![0.0f64]).unwrap();
        let (loss, g) = loss_mse(&y, &t).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.data(), &[4.0]);

        let (loss, g) = loss_mse(&y, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let y = input(3, 2, 5);
        let t = input(3, 2, 6);
        let (a, _) = loss_mse(&y, &t).unwrap();
        let (b, _) = loss_mse(&y.scale(-1.0), &t.scale(-1.0)).unwrap();
        assert_eq!(a, b);
        assert!(loss_mse(&y, &input(2, 3, 0)).is_err());
    }

    #[test]
    fn mse_gradient_matches_central_difference() {
        let y = input(3, 2, 8);
        let t = input(3, 2, 9);
        let (_, g) = loss_mse(&y, &t).unwrap();
        let eps = 1e-6;
        for i in 0..y.len() {
            let mut yp = y.clone();
            yp.data_mut()[i] += eps;
            let mut ym = y.clone();
            ym.data_mut()[i] -= eps;
            let fd = (loss_mse(&yp, &t).unwrap().0 - loss_mse(&ym, &t).unwrap().0) / (2.0 * eps);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
