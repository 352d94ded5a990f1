#![allow(dead_code)]

use rand::Rng;
use snlm_core::corpus::NoiseDistribution;
use snlm_core::model::{EncoderState, LanguageModel, ParamId};
use snlm_core::{seeded_rng, SeededRng};

/// A model whose output layer and biases are far from the initializer, so
/// scores and partition functions vary between contexts.
pub fn random_model(vocab: usize, dim: usize, seed: u64) -> LanguageModel {
    let mut rng = seeded_rng(seed);
    let mut m = LanguageModel::new(vocab, dim, 0.0, &mut rng).unwrap();
    for id in [ParamId::OutputWeight, ParamId::OutputBias, ParamId::Lstm0Bias, ParamId::Lstm1Bias] {
        for x in m.param_mut(id).values_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    for id in [ParamId::Embedding, ParamId::Lstm0Weight, ParamId::Lstm1Weight] {
        for x in m.param_mut(id).values_mut() {
            *x *= 10.0;
        }
    }
    m
}

pub fn random_ids(n: usize, vocab: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

/// Contexts for `tokens` positions (one lane), eval mode.
pub fn contexts(model: &LanguageModel, tokens: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    let ids = random_ids(tokens, model.vocab_size(), &mut rng);
    model.contexts(&EncoderState::zeros(1, model.dim()), &ids, tokens).unwrap().0
}

pub fn positive_noise(vocab: usize, seed: u64) -> NoiseDistribution {
    let mut rng = seeded_rng(seed);
    let w: Vec<f64> = (0..vocab).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    NoiseDistribution::new(w.iter().map(|x| x / s).collect()).unwrap()
}

// Naive, kernel-free reference math.

pub fn naive_scores(model: &LanguageModel, ctx: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let w = model.param(ParamId::OutputWeight).values();
    let b = model.param(ParamId::OutputBias).values();
    (0..model.vocab_size())
        .map(|v| {
            let mut s = b[v];
            for k in 0..d {
                s += w[v * d + k] * ctx[k];
            }
            if model.squash() {
                10.0 * (s / 5.0).tanh()
            } else {
                s
            }
        })
        .collect()
}

pub fn naive_log_z(scores: &[f64]) -> f64 {
    scores.iter().map(|s| s.exp()).sum::<f64>().ln()
}

pub fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
