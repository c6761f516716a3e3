//! Self-checks runnable from a release build: finite-difference gradient
//! check of the full training loss and metric oracle comparisons.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::Result;
use crate::evalsuite::{rank_all, report};
use crate::model::{forward_backward, init_params, EncoderParams, ModelConfig, NegativeTokens, PairBatch};
use crate::objective::{contrastive_loss, LossConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTest {
    pub max_grad_rel_err: f64,
    pub rank_mismatches: usize,
    pub spot_value: f64,
}

impl SelfTest {
    pub fn passed(&self) -> bool {
        self.max_grad_rel_err < 1e-4 && self.rank_mismatches == 0 && (self.spot_value - 0.626523).abs() < 1e-6
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter, on a 4-pair batch with 2 negatives.
pub fn gradient_check(use_vae: bool, use_reconstruction: bool, seed: u64) -> Result<f64> {
    let config = ModelConfig {
        use_vae,
        use_reconstruction,
        embed_dim: 6,
        hidden_dim: 5,
        latent_dim: 4,
        pos_dim: 4,
        vocab_size: 10,
        feature_dim: 3,
        ..ModelConfig::default()
    };
    let mut params = init_params(&config, seed)?;
    let mut r = rng::seeded(seed, &[1]);
    for (_, t) in params.tensors_mut() {
        t.mapv_inplace(|v| v + r.random_range(-0.2..0.2));
    }
    let motions: Vec<Array2<f64>> = (0..4).map(|i| Array2::from_shape_simple_fn((2 + i, 3), || r.random_range(-1.0..1.0))).collect();
    let batch = PairBatch {
        texts: vec![vec![2, 3, 0, 4], vec![5, 6], vec![7, 8, 9], vec![3, 2]],
        motions: motions.iter().map(|m| m.view()).collect(),
    };
    let negs = [
        NegativeTokens { tokens: vec![4, 3, 2], origin: 0 },
        NegativeTokens { tokens: vec![9, 8, 7], origin: 2 },
    ];
    let loss = LossConfig::for_flags(use_vae, use_reconstruction);
    let eval = |p: &EncoderParams| forward_backward(p, &config, &batch, &negs, &loss, seed);
    let grads = eval(&params)?.grads;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for ti in 0..params.tensors().len() {
        let g = grads.tensors()[ti].1.clone();
        for ((i, j), &a) in g.indexed_iter() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].1[[i, j]] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].1[[i, j]] -= h;
            let num = (eval(&plus)?.loss - eval(&minus)?.loss) / (2.0 * h);
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-3));
        }
    }
    Ok(worst)
}

fn sorted_ranks(sim: &Array2<f64>, correct: &[usize]) -> Vec<usize> {
    (0..sim.nrows())
        .map(|q| {
            let mut order: Vec<usize> = (0..sim.ncols()).collect();
            order.sort_by(|&a, &b| sim[[q, b]].partial_cmp(&sim[[q, a]]).expect("finite").then(a.cmp(&b)));
            1 + order.iter().position(|&c| c == correct[q]).expect("present")
        })
        .collect()
}

pub fn run(seed: u64) -> Result<SelfTest> {
    let mut max_grad_rel_err = 0.0f64;
    for (vae, rec) in [(false, false), (true, false), (false, true), (true, true)] {
        max_grad_rel_err = max_grad_rel_err.max(gradient_check(vae, rec, seed)?);
    }
    let mut r = rng::seeded(seed, &[2]);
    let mut rank_mismatches = 0;
    for n in [5usize, 17, 40, 90] {
        let sim = Array2::from_shape_simple_fn((n, n), || (r.random_range(-1.0..1.0f64) * 8.0).round() / 8.0);
        let correct: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let fast = rank_all(&sim, &correct)?;
        if fast != sorted_ranks(&sim, &correct) {
            rank_mismatches += 1;
        }
        report(&fast)?;
    }
    let id = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).expect("2x2");
    let c = contrastive_loss(&id, 1.0)?;
    Ok(SelfTest {
        max_grad_rel_err,
        rank_mismatches,
        spot_value: c.t2m + c.m2t,
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        assert!(super::run(0).unwrap().passed());
    }
}
