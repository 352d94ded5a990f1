use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::Vocabulary;
use crate::{Error, Result};

/// The NCE noise distribution: a categorical over word ids with cached
/// log-probabilities and a CDF sampler.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl NoiseDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sampler = WeightedIndex::new(probs.iter().copied())
            .map_err(|e| Error::Argument(alloc::format!("invalid noise distribution: {e}")))?;
        let log_probs = probs.iter().map(|&p| libm::log(p)).collect();
        Ok(Self { probs, log_probs, sampler })
    }

    pub fn unigram(vocab: &Vocabulary) -> Result<Self> {
        Self::new(vocab.unigram().to_vec())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, w: usize) -> f64 {
        self.probs[w]
    }

    /// `log p(w)`; `-inf` for words the noise never produces.
    pub fn log_prob(&self, w: usize) -> f64 {
        self.log_probs[w]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// `k` i.i.d. draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        (0..k).map(|_| self.sampler.sample(rng)).collect()
    }
}

/// Draws `k` noise words from the vocabulary's unigram distribution.
pub fn sample_noise<R: Rng + ?Sized>(vocab: &Vocabulary, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(NoiseDistribution::unigram(vocab)?.sample(k, rng))
}
