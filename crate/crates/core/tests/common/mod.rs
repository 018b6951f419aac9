#![allow(dead_code, clippy::needless_range_loop)]

use magc_core::{ModelConfig, SsdModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Straight-line f64 evaluation of the stack, written from the layer
/// equations without any of the library's helpers.
pub fn naive_forward(model: &SsdModel<f64>, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut cur: Vec<Vec<f64>> = x.to_vec();
    let mut finals = Vec::new();
    for p in &model.layers {
        let (hh, pp, nn) = (p.heads, p.head_dim, p.state_dim);
        let mut h = vec![vec![vec![0.0; pp]; nn]; hh];
        let mut out = Vec::with_capacity(cur.len());
        for xt in &cur {
            let mut yt = vec![0.0; hh * pp];
            for head in 0..hh {
                let xh = &xt[head * pp..(head + 1) * pp];
                let mut z = p.b_delta[head];
                for q in 0..pp {
                    z += p.w_delta[head * pp + q] * xh[q];
                }
                let delta = (1.0 + z.exp()).ln();
                let a = (-delta).exp();
                let mut bv = vec![0.0; nn];
                let mut cv = vec![0.0; nn];
                for n in 0..nn {
                    bv[n] = p.b_b[head * nn + n];
                    cv[n] = p.b_c[head * nn + n];
                    for q in 0..pp {
                        bv[n] += p.w_b[(head * nn + n) * pp + q] * xh[q];
                        cv[n] += p.w_c[(head * nn + n) * pp + q] * xh[q];
                    }
                }
                for n in 0..nn {
                    for q in 0..pp {
                        h[head][n][q] = a * h[head][n][q] + bv[n] * xh[q];
                    }
                }
                for q in 0..pp {
                    let mut acc = 0.0;
                    for n in 0..nn {
                        acc += cv[n] * h[head][n][q];
                    }
                    yt[head * pp + q] = if p.residual { acc + xh[q] } else { acc };
                }
            }
            out.push(yt);
        }
        finals.push(h.into_iter().flatten().flatten().collect());
        cur = out;
    }
    (cur, finals)
}

pub fn naive_loss(model: &SsdModel<f64>, x: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let (y, _) = naive_forward(model, x);
    let n = (y.len() * y[0].len()) as f64;
    y.iter()
        .flatten()
        .zip(target.iter().flatten())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, s: usize, d: usize) -> Tensor<f64> {
    Tensor::from_fn(&[s, d], |_| rng.sample::<f64, _>(StandardNormal))
}

/// Random geometry drawn from the given menus.
pub fn random_config(rng: &mut ChaCha8Rng, layers: &[usize], dims: &[usize]) -> ModelConfig {
    let nl = layers[rng.random_range(0..layers.len())];
    let d = dims[rng.random_range(0..dims.len())];
    let divisors: Vec<usize> = (1..=d).filter(|h| d.is_multiple_of(*h)).collect();
    let h = divisors[rng.random_range(0..divisors.len())];
    let n = rng.random_range(1..=3);
    ModelConfig::new(nl, d, h, n).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
