//! Training losses. Each is the per-token mean of the negated objective
//! so learning rates carry over between methods and window shapes.
//!
//! | method | loss per token                                                     |
//! |--------|--------------------------------------------------------------------|
//! | SM     | `log Z_c − m(w,c)`                                                 |
//! | DEV    | SM + `α (log Z_c)²`                                                |
//! | AND    | `−m(w,c)` + `(α/γ)·(1/N) Σ_{c∈D′} (log Z_c)²`                      |
//! | NCE    | `−log σ(Δ(w,c)) − Σ_i log(1 − σ(Δ(w_i,c)))`, `Δ = m − log(k p(w))` |
//! | NCE-R  | NCE + the AND penalty                                              |
//!
//! `D′` keeps each token independently with probability `γ`.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::distr::{Bernoulli, Distribution};
use rand::Rng;

use crate::corpus::NoiseDistribution;
use crate::model::{BoundParams, ParamId};
use crate::numerics::{sigmoid, Tape, Var};
use crate::{Error, Result};

/// `x ↦ 10·tanh(x/5)`: keeps unnormalized scores inside (−10, 10).
pub fn squash(x: f64) -> f64 {
    10.0 * libm::tanh(x / 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sm,
    Dev,
    And,
    Nce,
    NceR,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sm, Method::Dev, Method::And, Method::Nce, Method::NceR];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sm => "sm",
            Method::Dev => "dev",
            Method::And => "and",
            Method::Nce => "nce",
            Method::NceR => "nce-r",
        }
    }

    pub fn uses_alpha(self) -> bool {
        matches!(self, Method::Dev | Method::And | Method::NceR)
    }

    pub fn uses_gamma(self) -> bool {
        matches!(self, Method::And | Method::NceR)
    }

    pub fn uses_noise(self) -> bool {
        matches!(self, Method::Nce | Method::NceR)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(alloc::format!("unknown method {s:?} (sm|dev|and|nce|nce-r)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSharing {
    /// Fresh noise words for every target token.
    PerToken,
    /// One set of `k` noise words shared by every token of a window.
    PerWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub squash: bool,
    pub noise_sharing: NoiseSharing,
}

impl ObjectiveConfig {
    /// Defaults per method: α = 1 for DEV/AND, 10 for NCE-R, 0 otherwise;
    /// γ = 0.1; k = 100; squashing on for AND only.
    pub fn new(method: Method) -> Self {
        let alpha = match method {
            Method::Sm | Method::Nce => 0.0,
            Method::Dev | Method::And => 1.0,
            Method::NceR => 10.0,
        };
        Self { method, alpha, gamma: 0.1, k: 100, squash: method == Method::And, noise_sharing: NoiseSharing::PerToken }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument(alloc::format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Argument(alloc::format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.squash && matches!(self.method, Method::Sm | Method::Dev) {
            return Err(Error::Argument(alloc::format!("squashing does not apply to {}", self.method.name())));
        }
        Ok(())
    }
}

/// A loss on the tape plus bookkeeping for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub loss: Var,
    pub value: f64,
    pub tokens: usize,
    /// Value of the weighted `(log Z)²` penalty included in `value`.
    pub regularizer: f64,
    /// Contexts whose partition function entered the penalty.
    pub penalized: usize,
}

/// The output layer's variables on a tape.
#[derive(Debug, Clone, Copy)]
pub struct OutputLayer {
    pub weight: Var,
    pub bias: Var,
}

impl From<&BoundParams> for OutputLayer {
    fn from(b: &BoundParams) -> Self {
        Self { weight: b.get(ParamId::OutputWeight), bias: b.get(ParamId::OutputBias) }
    }
}

/// σ(m − log(k·p(w))): the probability that `(w, c)` came from the data
/// rather than the noise, under scores `m`.
pub fn nce_posterior(score: f64, word: usize, noise: &NoiseDistribution, k: usize) -> Result<f64> {
    let p = noise.prob(word);
    if !(p > 0.0) {
        return Err(Error::Domain(alloc::format!("word {word} has zero noise probability")));
    }
    Ok(sigmoid(score - libm::log(k as f64 * p)))
}

fn full_scores(tape: &mut Tape, out: OutputLayer, ctx: Var, squash: bool) -> Var {
    let s = tape.matmul_t(ctx, out.weight);
    let s = tape.add_row(s, out.bias);
    if squash {
        tape.squash(s)
    } else {
        s
    }
}

fn check_targets(tape: &Tape, ctx: Var, targets: &[usize]) -> Result<usize> {
    let (rows, _) = tape.shape(ctx);
    if rows != targets.len() || rows == 0 {
        return Err(Error::Shape(alloc::format!("{rows} contexts for {} targets", targets.len())));
    }
    Ok(rows)
}

fn finish(tape: &Tape, loss: Var, tokens: usize, regularizer: f64, penalized: usize) -> LossValue {
    LossValue { loss, value: tape.scalar(loss), tokens, regularizer, penalized }
}

/// Cross-entropy under the exact softmax.
pub fn sm_loss(tape: &mut Tape, out: OutputLayer, ctx: Var, targets: &[usize]) -> Result<LossValue> {
    let n = check_targets(tape, ctx, targets)?;
    let s = full_scores(tape, out, ctx, false);
    let lse = tape.logsumexp_rows(s);
    let tgt = tape.pick_per_row(s, targets);
    let nll = tape.sub(lse, tgt);
    let total = tape.sum(nll);
    let loss = tape.scale(total, 1.0 / n as f64);
    Ok(finish(tape, loss, n, 0.0, 0))
}

/// Softmax cross-entropy plus `α · mean (log Z_c)²`, sharing one `log Z_c`
/// per token between both terms.
pub fn dev_loss(tape: &mut Tape, out: OutputLayer, ctx: Var, targets: &[usize], alpha: f64) -> Result<LossValue> {
    let n = check_targets(tape, ctx, targets)?;
    let s = full_scores(tape, out, ctx, false);
    let lse = tape.logsumexp_rows(s);
    let tgt = tape.pick_per_row(s, targets);
    let nll = tape.sub(lse, tgt);
    let total = tape.sum(nll);
    let mut loss = tape.scale(total, 1.0 / n as f64);
    let mut reg = 0.0;
    if alpha != 0.0 {
        let penalty = penalty_from_lse(tape, lse, alpha / n as f64);
        reg = tape.scalar(penalty);
        loss = tape.add(loss, penalty);
    }
    Ok(finish(tape, loss, n, reg, if alpha != 0.0 { n } else { 0 }))
}

fn penalty_from_lse(tape: &mut Tape, lse: Var, weight: f64) -> Var {
    let sq = tape.square(lse);
    let s = tape.sum(sq);
    tape.scale(s, weight)
}

/// Picks `D′` and returns `(α/γ)(1/N) Σ_{D′} (log Z_c)²` on the tape, or
/// `None` when no token was kept.
#[allow(clippy::too_many_arguments)]
fn sampled_penalty<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    n: usize,
    alpha: f64,
    gamma: f64,
    squash: bool,
    rng: &mut R,
) -> Result<Option<(Var, usize)>> {
    let keep = Bernoulli::new(gamma).map_err(|_| Error::Argument(alloc::format!("gamma {gamma} is not a probability")))?;
    let chosen: Vec<usize> = (0..n).filter(|_| keep.sample(rng)).collect();
    if chosen.is_empty() {
        return Ok(None);
    }
    let sub = tape.gather_rows(ctx, &chosen);
    let s = full_scores(tape, out, sub, squash);
    let lse = tape.logsumexp_rows(s);
    let penalty = penalty_from_lse(tape, lse, alpha / (gamma * n as f64));
    Ok(Some((penalty, chosen.len())))
}

/// Unnormalized target scores plus the sampled partition penalty.
#[allow(clippy::too_many_arguments)]
pub fn and_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    targets: &[usize],
    alpha: f64,
    gamma: f64,
    squash: bool,
    rng: &mut R,
) -> Result<LossValue> {
    let n = check_targets(tape, ctx, targets)?;
    let tgt = tape.score_pairs(ctx, out.weight, out.bias, targets, 1);
    let tgt = if squash { tape.squash(tgt) } else { tgt };
    let total = tape.sum(tgt);
    let mut loss = tape.scale(total, -1.0 / n as f64);
    let (mut reg, mut penalized) = (0.0, 0);
    if alpha != 0.0 {
        if let Some((penalty, kept)) = sampled_penalty(tape, out, ctx, n, alpha, gamma, squash, rng)? {
            reg = tape.scalar(penalty);
            penalized = kept;
            loss = tape.add(loss, penalty);
        }
    }
    Ok(finish(tape, loss, n, reg, penalized))
}

/// Draws the noise words for `n` tokens: `n·k` ids laid out token-major.
pub fn draw_noise<R: Rng + ?Sized>(
    noise: &NoiseDistribution,
    n: usize,
    k: usize,
    sharing: NoiseSharing,
    rng: &mut R,
) -> Vec<usize> {
    match sharing {
        NoiseSharing::PerToken => noise.sample(n * k, rng),
        NoiseSharing::PerWindow => {
            let shared = noise.sample(k, rng);
            (0..n).flat_map(|_| shared.iter().copied()).collect()
        }
    }
}

/// NCE with explicit noise words (`noise_ids.len() == N·k`).
#[allow(clippy::too_many_arguments)]
pub fn nce_loss_with_noise(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    targets: &[usize],
    noise_ids: &[usize],
    noise: &NoiseDistribution,
    k: usize,
    squash: bool,
) -> Result<LossValue> {
    let n = check_targets(tape, ctx, targets)?;
    if k == 0 || noise_ids.len() != n * k {
        return Err(Error::Shape(alloc::format!("{} noise ids for {n} tokens × k = {k}", noise_ids.len())));
    }
    let cols = k + 1;
    let mut ids = Vec::with_capacity(n * cols);
    let mut offsets = Vec::with_capacity(n * cols);
    let mut signs = Vec::with_capacity(n * cols);
    let log_k = libm::log(k as f64);
    for (t, &w) in targets.iter().enumerate() {
        let row = core::iter::once(w).chain(noise_ids[t * k..(t + 1) * k].iter().copied());
        for (j, id) in row.enumerate() {
            let lp = noise.log_prob(id);
            if lp == f64::NEG_INFINITY {
                return Err(Error::Domain(alloc::format!("word {id} has zero noise probability")));
            }
            ids.push(id);
            offsets.push(log_k + lp);
            signs.push(if j == 0 { 1.0 } else { -1.0 });
        }
    }
    let s = tape.score_pairs(ctx, out.weight, out.bias, &ids, cols);
    let s = if squash { tape.squash(s) } else { s };
    let offsets = tape.constant(n, cols, offsets);
    let delta = tape.sub(s, offsets);
    let signs = tape.constant(n, cols, signs);
    let signed = tape.mul(delta, signs);
    let ls = tape.log_sigmoid(signed);
    let total = tape.sum(ls);
    let loss = tape.scale(total, -1.0 / n as f64);
    Ok(finish(tape, loss, n, 0.0, 0))
}

#[allow(clippy::too_many_arguments)]
pub fn nce_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    targets: &[usize],
    noise: &NoiseDistribution,
    k: usize,
    sharing: NoiseSharing,
    squash: bool,
    rng: &mut R,
) -> Result<LossValue> {
    let noise_ids = draw_noise(noise, targets.len(), k, sharing, rng);
    nce_loss_with_noise(tape, out, ctx, targets, &noise_ids, noise, k, squash)
}

/// NCE plus the sampled partition penalty. With `α = 0` it is NCE exactly
/// and draws no subsample.
#[allow(clippy::too_many_arguments)]
pub fn ncer_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    targets: &[usize],
    noise: &NoiseDistribution,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<LossValue> {
    let base = nce_loss(tape, out, ctx, targets, noise, cfg.k, cfg.noise_sharing, cfg.squash, rng)?;
    if cfg.alpha == 0.0 {
        return Ok(base);
    }
    let n = base.tokens;
    match sampled_penalty(tape, out, ctx, n, cfg.alpha, cfg.gamma, cfg.squash, rng)? {
        Some((penalty, kept)) => {
            let reg = tape.scalar(penalty);
            let loss = tape.add(base.loss, penalty);
            Ok(finish(tape, loss, n, reg, kept))
        }
        None => Ok(base),
    }
}

/// Dispatches on `cfg.method`.
pub fn loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    out: OutputLayer,
    ctx: Var,
    targets: &[usize],
    cfg: &ObjectiveConfig,
    noise: &NoiseDistribution,
    rng: &mut R,
) -> Result<LossValue> {
    cfg.validate()?;
    match cfg.method {
        Method::Sm => sm_loss(tape, out, ctx, targets),
        Method::Dev => dev_loss(tape, out, ctx, targets, cfg.alpha),
        Method::And => and_loss(tape, out, ctx, targets, cfg.alpha, cfg.gamma, cfg.squash, rng),
        Method::Nce => nce_loss(tape, out, ctx, targets, noise, cfg.k, cfg.noise_sharing, cfg.squash, rng),
        Method::NceR => ncer_loss(tape, out, ctx, targets, noise, cfg, rng),
    }
}
