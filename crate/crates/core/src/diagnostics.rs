//! Self-normalization diagnostics: statistics of `log Z_c`, normalized and
//! unnormalized perplexity, predictive entropy and sentence completion.
//!
//! Normalized quantities are always computed from the unshifted scores, so
//! they are bitwise identical for a model and any [`ShiftedModel`] over it.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{BatchStream, CompletionItem, Vocabulary, NUM_CANDIDATES};
use crate::model::{EncoderState, LanguageModel};
use crate::numerics::{logsumexp_unchecked, CompensatedSum};
use crate::{Error, Result};

/// Anything that scores words as `m(w, c) − offset` for an underlying model.
pub trait Scorer {
    fn model(&self) -> &LanguageModel;

    /// Constant subtracted from every score.
    fn offset(&self) -> f64 {
        0.0
    }
}

impl Scorer for LanguageModel {
    fn model(&self) -> &LanguageModel {
        self
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn model(&self) -> &LanguageModel {
        (**self).model()
    }

    fn offset(&self) -> f64 {
        (**self).offset()
    }
}

/// A model whose scores are lowered by a constant, centering `log Z_c`.
#[derive(Debug, Clone)]
pub struct ShiftedModel {
    base: LanguageModel,
    shift: f64,
}

impl ShiftedModel {
    pub fn new(base: LanguageModel, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::NonFinite("shift must be finite".into()));
        }
        Ok(Self { base, shift })
    }

    pub fn base(&self) -> &LanguageModel {
        &self.base
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn into_parts(self) -> (LanguageModel, f64) {
        (self.base, self.shift)
    }

    pub fn score(&self, context: &[f64], word: usize) -> f64 {
        self.base.score(context, word) - self.shift
    }

    pub fn log_partition(&self, context: &[f64]) -> f64 {
        self.base.log_partition(context) - self.shift
    }
}

impl Scorer for ShiftedModel {
    fn model(&self) -> &LanguageModel {
        &self.base
    }

    fn offset(&self) -> f64 {
        self.shift
    }
}

/// Optional extras for [`eval_diagnostics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Collect `(H_c, log Z_c)` pairs for the correlation and histogram.
    pub correlation: bool,
    /// Histogram bins along (entropy, log Z).
    pub bins: (usize, usize),
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { correlation: false, bins: (50, 50) }
    }
}

/// Counts over a rectangular grid. `counts[i * z_bins + j]` covers
/// entropy bin `i` and `log Z` bin `j`; the last bin on each axis is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub h_edges: Vec<f64>,
    pub z_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram2d {
    /// Bins spanning the sample's range on each axis. A constant axis gets
    /// a unit-width range centred on its value.
    pub fn build(pairs: &[(f64, f64)], h_bins: usize, z_bins: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("histogram sample"));
        }
        if h_bins == 0 || z_bins == 0 {
            return Err(Error::Argument("histogram needs at least one bin per axis".into()));
        }
        let h_edges = edges(pairs.iter().map(|p| p.0), h_bins);
        let z_edges = edges(pairs.iter().map(|p| p.1), z_bins);
        let mut counts = vec![0u64; h_bins * z_bins];
        for &(h, z) in pairs {
            counts[bin(&h_edges, h) * z_bins + bin(&z_edges, z)] += 1;
        }
        Ok(Self { h_edges, z_edges, counts })
    }

    pub fn h_bins(&self) -> usize {
        self.h_edges.len() - 1
    }

    pub fn z_bins(&self) -> usize {
        self.z_edges.len() - 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn edges(values: impl Iterator<Item = f64>, bins: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut e: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    e[bins] = hi;
    e
}

fn bin(edges: &[f64], x: f64) -> usize {
    let last = edges.len() - 2;
    // first edge strictly above x, minus one
    edges[1..=last].partition_point(|&e| e <= x).min(last)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub mu_z: f64,
    /// Population standard deviation of `log Z_c`.
    pub sigma_z: f64,
    pub perp: f64,
    pub u_perp: f64,
    pub n_contexts: usize,
    /// `None` unless requested, and when either coordinate is constant.
    pub pearson_r: Option<f64>,
    pub histogram: Option<Histogram2d>,
}

impl DiagnosticsReport {
    /// `(metric, value)` rows in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("mu_z", self.mu_z),
            ("sigma_z", self.sigma_z),
            ("perp", self.perp),
            ("u_perp", self.u_perp),
            ("n_contexts", self.n_contexts as f64),
        ];
        if let Some(r) = self.pearson_r {
            rows.push(("pearson_r", r));
        }
        rows
    }
}

/// Running per-context statistics.
struct Accumulator {
    offset: f64,
    log_z: Vec<f64>,
    log_prob: CompensatedSum,
    raw: CompensatedSum,
    entropy: Option<Vec<f64>>,
}

impl Accumulator {
    fn new(offset: f64, correlation: bool) -> Self {
        Self {
            offset,
            log_z: Vec::new(),
            log_prob: CompensatedSum::new(),
            raw: CompensatedSum::new(),
            entropy: correlation.then(Vec::new),
        }
    }

    /// `logits` holds one row of base scores per target.
    fn push_rows(&mut self, logits: &[f64], targets: &[usize]) {
        let v = logits.len() / targets.len();
        for (row, &t) in logits.chunks_exact(v).zip(targets) {
            let lse = logsumexp_unchecked(row);
            self.log_prob.add(row[t] - lse);
            self.raw.add(row[t] - self.offset);
            self.log_z.push(lse - self.offset);
            if let Some(h) = self.entropy.as_mut() {
                h.push(entropy_with(row, lse));
            }
        }
    }

    fn finish(self, bins: (usize, usize)) -> Result<DiagnosticsReport> {
        let n = self.log_z.len();
        if n == 0 {
            return Err(Error::Empty("evaluation stream"));
        }
        let (mu_z, sigma_z) = mean_and_std(&self.log_z);
        let nf = n as f64;
        let (pearson_r, histogram) = match self.entropy {
            Some(h) => {
                let pairs: Vec<(f64, f64)> = h.into_iter().zip(self.log_z.iter().copied()).collect();
                let r = pearson(&pairs).ok();
                (r, Some(Histogram2d::build(&pairs, bins.0, bins.1)?))
            }
            None => (None, None),
        };
        Ok(DiagnosticsReport {
            mu_z,
            sigma_z,
            perp: libm::exp(-self.log_prob.value() / nf),
            u_perp: libm::exp(-self.raw.value() / nf),
            n_contexts: n,
            pearson_r,
            histogram,
        })
    }
}

/// Mean and population standard deviation, both compensated.
pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).collect::<CompensatedSum>().value() / n;
    (mu, libm::sqrt(var))
}

/// Evaluates every target of `stream`, carrying state across windows from a
/// zero start. Dropout is never applied.
pub fn eval_diagnostics<S: Scorer>(scorer: &S, stream: &BatchStream, options: EvalOptions) -> Result<DiagnosticsReport> {
    let model = scorer.model();
    let mut acc = Accumulator::new(scorer.offset(), options.correlation);
    let mut state = EncoderState::zeros(stream.batch(), model.dim());
    for window in stream.windows() {
        let (ctx, next) = model.contexts(&state, &window.inputs, window.steps)?;
        acc.push_rows(&model.logits(&ctx), &window.targets);
        state = next;
    }
    acc.finish(options.bins)
}

/// Evaluates sentences independently, each from a fresh state. A sentence
/// `w1..wn` (without end marker) is read as `<eos> w1..wn` and predicts
/// `w1..wn <eos>`.
pub fn eval_sentences<S: Scorer>(scorer: &S, sentences: &[Vec<usize>], options: EvalOptions) -> Result<DiagnosticsReport> {
    let model = scorer.model();
    let mut acc = Accumulator::new(scorer.offset(), options.correlation);
    for s in sentences {
        let (inputs, targets) = sentence_io(s);
        let (ctx, _) = model.contexts(&EncoderState::zeros(1, model.dim()), &inputs, inputs.len())?;
        acc.push_rows(&model.logits(&ctx), &targets);
    }
    acc.finish(options.bins)
}

fn sentence_io(sentence: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(sentence.len() + 1);
    inputs.push(Vocabulary::EOS_ID);
    inputs.extend_from_slice(sentence);
    let mut targets = sentence.to_vec();
    targets.push(Vocabulary::EOS_ID);
    (inputs, targets)
}

/// Measures `μ_z` on `dev` and returns the model shifted by it.
pub fn shift(model: &LanguageModel, dev: &BatchStream) -> Result<ShiftedModel> {
    let report = eval_diagnostics(model, dev, EvalOptions::default())?;
    ShiftedModel::new(model.clone(), report.mu_z)
}

/// `H_c = −Σ_w p(w|c) log p(w|c)` of the model's normalized distribution.
pub fn entropy(model: &LanguageModel, context: &[f64]) -> f64 {
    entropy_of_scores(&model.logits(context))
}

/// Entropy of the softmax of `scores`.
pub fn entropy_of_scores(scores: &[f64]) -> f64 {
    entropy_with(scores, logsumexp_unchecked(scores))
}

fn entropy_with(scores: &[f64], lse: f64) -> f64 {
    let mut h = CompensatedSum::new();
    for &s in scores {
        let lp = s - lse;
        let p = libm::exp(lp);
        if p > 0.0 {
            h.add(-p * lp);
        }
    }
    h.value().max(0.0)
}

/// Pearson correlation of `(x, y)` pairs.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).collect::<CompensatedSum>().value() / n;
    let my = pairs.iter().map(|p| p.1).collect::<CompensatedSum>().value() / n;
    let (mut sxy, mut sxx, mut syy) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    if sxx.value() == 0.0 || syy.value() == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let r = sxy.value() / libm::sqrt(sxx.value() * syy.value());
    Ok(r.clamp(-1.0, 1.0))
}

/// Correlation and histogram of `(H_c, log Z_c)` over context rows.
pub fn entropy_logz_correlation<S: Scorer>(
    scorer: &S,
    contexts: &[f64],
    bins: (usize, usize),
) -> Result<(f64, Histogram2d)> {
    let model = scorer.model();
    let v = model.vocab_size();
    let logits = model.logits(contexts);
    let pairs: Vec<(f64, f64)> = logits
        .chunks_exact(v)
        .map(|row| {
            let lse = logsumexp_unchecked(row);
            (entropy_with(row, lse), lse - scorer.offset())
        })
        .collect();
    let r = pearson(&pairs)?;
    Ok((r, Histogram2d::build(&pairs, bins.0, bins.1)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionMode {
    /// Sum of `m(w,c) − log Z_c`.
    Normalized,
    /// Sum of `m(w,c)`.
    Unnormalized,
}

/// Sentence scores of one item's candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScores {
    pub normalized: [f64; NUM_CANDIDATES],
    pub unnormalized: [f64; NUM_CANDIDATES],
}

impl CandidateScores {
    pub fn get(&self, mode: CompletionMode) -> &[f64; NUM_CANDIDATES] {
        match mode {
            CompletionMode::Normalized => &self.normalized,
            CompletionMode::Unnormalized => &self.unnormalized,
        }
    }
}

/// Scores each candidate sentence, re-encoding the whole sentence from a
/// fresh state. The five candidates run as five lanes of one batch.
pub fn candidate_scores<S: Scorer>(scorer: &S, item: &CompletionItem) -> Result<CandidateScores> {
    let model = scorer.model();
    let v = model.vocab_size();
    let b = NUM_CANDIDATES;
    let ios: Vec<(Vec<usize>, Vec<usize>)> = (0..b).map(|c| sentence_io(&item.filled(c))).collect();
    let steps = ios[0].0.len();
    let mut inputs = vec![0; steps * b];
    let mut targets = vec![0; steps * b];
    for (lane, (i, t)) in ios.iter().enumerate() {
        for s in 0..steps {
            inputs[s * b + lane] = i[s];
            targets[s * b + lane] = t[s];
        }
    }
    let (ctx, _) = model.contexts(&EncoderState::zeros(b, model.dim()), &inputs, steps)?;
    let logits = model.logits(&ctx);
    let mut norm = [CompensatedSum::new(); NUM_CANDIDATES];
    let mut raw = [CompensatedSum::new(); NUM_CANDIDATES];
    for (r, row) in logits.chunks_exact(v).enumerate() {
        let (lane, t) = (r % b, targets[r]);
        norm[lane].add(row[t] - logsumexp_unchecked(row));
        raw[lane].add(row[t] - scorer.offset());
    }
    Ok(CandidateScores {
        normalized: norm.map(|s| s.value()),
        unnormalized: raw.map(|s| s.value()),
    })
}

/// Result of one completion run in one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutcome {
    pub mode: CompletionMode,
    pub choices: Vec<usize>,
    pub scores: Vec<[f64; NUM_CANDIDATES]>,
    /// `None` for items without a known answer.
    pub correct: Vec<Option<bool>>,
    /// Fraction correct over answered items; `None` if none are answered.
    pub accuracy: Option<f64>,
    pub unanswered: usize,
}

impl CompletionOutcome {
    fn from_scores(mode: CompletionMode, items: &[CompletionItem], scores: Vec<[f64; NUM_CANDIDATES]>) -> Self {
        let choices: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
        let correct: Vec<Option<bool>> = items.iter().zip(&choices).map(|(it, &c)| it.answer.map(|a| a == c)).collect();
        let answered = correct.iter().filter(|c| c.is_some()).count();
        let hits = correct.iter().filter(|c| **c == Some(true)).count();
        Self {
            mode,
            choices,
            scores,
            accuracy: (answered > 0).then(|| hits as f64 / answered as f64),
            unanswered: items.len() - answered,
            correct,
        }
    }

    /// Chosen score minus the best other candidate's score (≥ 0).
    pub fn score_gap(&self, item: usize) -> f64 {
        let s = &self.scores[item];
        let c = self.choices[item];
        let runner_up = s
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != c)
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        s[c] - runner_up
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn complete<S: Scorer>(scorer: &S, items: &[CompletionItem], mode: CompletionMode) -> Result<CompletionOutcome> {
    Ok(complete_both(scorer, items)?.into_iter().find(|o| o.mode == mode).expect("both modes computed"))
}

/// Normalized and unnormalized outcomes from one pass over the items.
pub fn complete_both<S: Scorer>(scorer: &S, items: &[CompletionItem]) -> Result<[CompletionOutcome; 2]> {
    if items.is_empty() {
        return Err(Error::Empty("completion items"));
    }
    let mut norm = Vec::with_capacity(items.len());
    let mut raw = Vec::with_capacity(items.len());
    for item in items {
        let s = candidate_scores(scorer, item)?;
        norm.push(s.normalized);
        raw.push(s.unnormalized);
    }
    Ok([
        CompletionOutcome::from_scores(CompletionMode::Normalized, items, norm),
        CompletionOutcome::from_scores(CompletionMode::Unnormalized, items, raw),
    ])
}

/// Unnormalized accuracy minus normalized accuracy.
pub fn delta_accuracy(normalized: &CompletionOutcome, unnormalized: &CompletionOutcome) -> Option<f64> {
    Some(unnormalized.accuracy? - normalized.accuracy?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges_cover_the_sample() {
        let pairs = [(0.0, 1.0), (1.0, 2.0), (0.5, 1.5), (1.0, 1.0)];
        let h = Histogram2d::build(&pairs, 2, 4).unwrap();
        assert_eq!(h.h_edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.total(), 4);
        // maxima land in the closed last bin
        assert_eq!(h.counts[7], 1);
        let flat = Histogram2d::build(&[(3.0, 3.0)], 3, 3).unwrap();
        assert_eq!(flat.h_edges[0], 2.5);
        assert_eq!(flat.total(), 1);
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn pearson_of_lines() {
        let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!((pearson(&up).unwrap() - 1.0).abs() < 1e-15);
        let down: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -(i as f64))).collect();
        assert!((pearson(&down).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[(1.0, 2.0), (1.0, 3.0)]), Err(Error::UndefinedCorrelation)));
    }

    #[test]
    fn entropy_limits() {
        assert!((entropy_of_scores(&[0.0; 10]) - libm::log(10.0)).abs() < 1e-15);
        let mut s = [0.0; 10];
        s[3] = 50.0;
        assert!(entropy_of_scores(&s) <= 1e-15);
    }
}
