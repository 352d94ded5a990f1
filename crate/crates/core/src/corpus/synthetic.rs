//! A first-order Markov text generator with a known entropy rate.
//!
//! State 0 is the sentence boundary: a line is the run of words emitted
//! between two visits to it, so the `<eos>`-joined stream produced by
//! [`Vocabulary::encode_lines`](super::Vocabulary::encode_lines) is exactly a
//! trajectory of the chain and no model can beat `exp(entropy_rate)`
//! perplexity on it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp1;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BigramGenerator {
    transitions: Vec<Vec<f64>>,
}

/// Shape of a randomly drawn generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub words: usize,
    /// Zipf exponent of the word popularity used to pick successors.
    pub zipf: f64,
    /// Fraction of states whose next word is nearly determined.
    pub sharp_fraction: f64,
    /// Mass on the single favoured successor of a sharp state.
    pub sharp_mass: f64,
    /// Largest successor set of a broad state.
    pub max_branch: usize,
    /// Probability that any word ends the sentence.
    pub eos_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { words: 500, zipf: 1.0, sharp_fraction: 0.4, sharp_mass: 0.95, max_branch: 40, eos_prob: 0.06 }
    }
}

pub fn word_name(state: usize) -> String {
    format!("w{state}")
}

impl BigramGenerator {
    /// `transitions[i][j] = P(next = j | current = i)` over states
    /// `0..n`, state 0 being the sentence boundary.
    pub fn new(transitions: Vec<Vec<f64>>) -> Result<Self> {
        let n = transitions.len();
        if n < 2 {
            return Err(Error::Argument("need the boundary state and at least one word".into()));
        }
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || libm::fabs(s - 1.0) > 1e-9 {
                return Err(Error::Argument(format!("row {i} is not a distribution")));
            }
        }
        if transitions[0][0] != 0.0 {
            return Err(Error::Argument("empty sentences are not allowed".into()));
        }
        Ok(Self { transitions })
    }

    pub fn random<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<Self> {
        let n = cfg.words + 1;
        let popularity: Vec<f64> = (0..cfg.words).map(|j| libm::pow(j as f64 + 1.0, -cfg.zipf)).collect();
        let mut transitions = Vec::with_capacity(n);
        for state in 0..n {
            let mut row = vec![0.0; n];
            let sharp = state != 0 && rng.random_bool(cfg.sharp_fraction);
            let branch = if sharp { 5 } else { rng.random_range(2..=cfg.max_branch.max(2)) };
            let succ = pick_distinct(&popularity, branch.min(cfg.words), rng);
            if sharp {
                let rest = (1.0 - cfg.sharp_mass) / (succ.len() - 1).max(1) as f64;
                for (k, &j) in succ.iter().enumerate() {
                    row[j + 1] = if k == 0 { cfg.sharp_mass } else { rest };
                }
            } else {
                for &j in &succ {
                    let e: f64 = Exp1.sample(rng);
                    row[j + 1] = e * popularity[j];
                }
            }
            let word_mass = if state == 0 { 1.0 } else { 1.0 - cfg.eos_prob };
            let total: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p *= word_mass / total;
            }
            if state != 0 {
                row[0] = cfg.eos_prob;
            }
            transitions.push(row);
        }
        Self::new(transitions)
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    /// Stationary distribution, by power iteration on the lazy chain
    /// `(P + I)/2` (same fixed point, no periodicity).
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.num_states();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    next[j] += 0.5 * pi[i] * p;
                }
                next[i] += 0.5 * pi[i];
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| libm::fabs(a - b)).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }

    /// `Σ_i π_i H(P_i)` in nats per token (boundary tokens included).
    pub fn entropy_rate(&self) -> f64 {
        let pi = self.stationary();
        self.transitions
            .iter()
            .zip(&pi)
            .map(|(row, &w)| {
                let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * libm::log(p)).sum();
                w * h
            })
            .sum()
    }

    /// Emits whole sentences until at least `min_tokens` tokens (counting
    /// one boundary per sentence) have been produced.
    pub fn generate<R: Rng + ?Sized>(&self, min_tokens: usize, rng: &mut R) -> Vec<String> {
        let samplers: Vec<WeightedIndex<f64>> = self
            .transitions
            .iter()
            .map(|row| WeightedIndex::new(row.iter().copied()).expect("validated rows"))
            .collect();
        let mut lines = Vec::new();
        let mut produced = 0;
        while produced < min_tokens {
            let mut line = String::new();
            let mut state = samplers[0].sample(rng);
            while state != 0 {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&word_name(state));
                produced += 1;
                state = samplers[state].sample(rng);
            }
            produced += 1;
            lines.push(line);
        }
        lines
    }
}

fn pick_distinct<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let Ok(dist) = WeightedIndex::new(w.iter().copied()) else { break };
        let j = dist.sample(rng);
        out.push(j);
        w[j] = 0.0;
    }
    out
}
