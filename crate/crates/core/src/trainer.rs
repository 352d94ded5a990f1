//! Plain SGD over truncated-BPTT windows.
//!
//! Within an epoch the encoder state is carried from each window to the
//! next (detached); every epoch starts from a zero state. All randomness
//! (dropout masks, noise words, penalty subsampling) comes from one stream
//! derived from the seed and is consumed in window order.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;

use crate::corpus::{BatchStream, NoiseDistribution};
use crate::diagnostics::{eval_diagnostics, EvalOptions};
use crate::model::{EncoderState, LanguageModel};
use crate::numerics::{CompensatedSum, ParamTensor, Tape};
use crate::objectives::{loss, Method, ObjectiveConfig, OutputLayer};
use crate::{Error, Result, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The rate is divided by this once per epoch after `decay_start`.
    pub decay: f64,
    pub decay_start: usize,
    /// Global gradient-norm ceiling; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    /// Validate every this many epochs; the last epoch is always validated.
    pub eval_every: usize,
}

impl TrainConfig {
    /// 20 epochs, rate 1 divided by 1.2 per epoch after epoch 6, clip 5,
    /// 20 lanes of 20 steps.
    pub fn new(objective: ObjectiveConfig) -> Self {
        Self {
            epochs: 20,
            lr: 1.0,
            decay: 1.2,
            decay_start: 6,
            clip: 5.0,
            batch: 20,
            steps: 20,
            seed: 1,
            objective,
            eval_every: 1,
        }
    }

    /// Halves the rate after every epoch, starting with the first.
    pub fn mscc(objective: ObjectiveConfig) -> Self {
        Self { decay: 2.0, decay_start: 1, ..Self::new(objective) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.into()));
        if self.epochs == 0 || self.batch == 0 || self.steps == 0 || self.eval_every == 0 {
            return bad("epochs, batch, steps and eval cadence must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.decay > 1.0 && self.decay.is_finite()) {
            return bad("decay factor must exceed 1");
        }
        if !(self.clip > 0.0) {
            return bad("clip norm must be positive");
        }
        self.objective.validate()
    }

    /// `lr / decay^max(0, epoch − decay_start)` for 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let over = epoch.saturating_sub(self.decay_start);
        self.lr / libm::pow(self.decay, over as f64)
    }
}

/// One completed epoch. Validation fields are `None` on epochs skipped by
/// the evaluation cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss.
    pub loss: f64,
    pub ppl: Option<f64>,
    pub mu_z: Option<f64>,
    pub sigma_z: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,loss,ppl,mu_z,sigma_z,seconds";

    /// Bitwise equality of every column except wall time.
    pub fn same_metrics(&self, other: &TrainLog) -> bool {
        let key = |r: &EpochRecord| {
            (
                r.epoch,
                r.loss.to_bits(),
                r.ppl.map(f64::to_bits),
                r.mu_z.map(f64::to_bits),
                r.sigma_z.map(f64::to_bits),
            )
        };
        self.records.len() == other.records.len() && self.records.iter().zip(&other.records).all(|(a, b)| key(a) == key(b))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Source of elapsed seconds for the log.
pub trait Clock {
    fn seconds(&mut self) -> f64;
}

/// Always reports zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&mut self) -> f64 {
        0.0
    }
}

/// Clips the global gradient norm to `clip`, takes one step of size `lr`
/// and zeroes the gradients. Returns the norm before clipping.
pub fn sgd_step(params: &mut [ParamTensor], lr: f64, clip: f64) -> Result<f64> {
    let norm = libm::sqrt(params.iter().map(ParamTensor::grad_sq_norm).sum());
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    let scale = if norm > clip { clip / norm } else { 1.0 };
    let step = lr * scale;
    for p in params.iter_mut() {
        let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
        for (v, g) in p.values_mut().iter_mut().zip(&g) {
            *v -= step * g;
        }
        p.zero_grad();
    }
    Ok(norm)
}

/// Epoch-at-a-time driver; [`train`] runs it to completion.
pub struct Trainer<'a> {
    model: &'a mut LanguageModel,
    noise: &'a NoiseDistribution,
    cfg: TrainConfig,
    rng: SeededRng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut LanguageModel, noise: &'a NoiseDistribution, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if noise.probs().len() != model.vocab_size() {
            return Err(Error::Shape(format!(
                "noise covers {} words, model has {}",
                noise.probs().len(),
                model.vocab_size()
            )));
        }
        let squash = cfg.objective.squash && !matches!(cfg.objective.method, Method::Sm | Method::Dev);
        model.set_squash(squash);
        let mut rng = SeededRng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self { model, noise, cfg, rng, epoch: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &LanguageModel {
        self.model
    }

    /// Trains one epoch and validates if the cadence calls for it.
    pub fn run_epoch<C: Clock + ?Sized>(
        &mut self,
        train: &BatchStream,
        valid: &BatchStream,
        clock: &mut C,
    ) -> Result<EpochRecord> {
        if train.batch() != self.cfg.batch || train.steps() != self.cfg.steps {
            return Err(Error::Shape(format!(
                "training stream is {}×{}, config asks for {}×{}",
                train.batch(),
                train.steps(),
                self.cfg.batch,
                self.cfg.steps
            )));
        }
        let start = clock.seconds();
        self.epoch += 1;
        let epoch = self.epoch;
        let lr = self.cfg.learning_rate(epoch);
        let mut state = EncoderState::zeros(train.batch(), self.model.dim());
        let mut total = CompensatedSum::new();
        let mut tokens = 0usize;
        for (i, window) in train.windows().enumerate() {
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape, true);
            let (ctx, next) =
                self.model.encode(&mut tape, &bound, &state, &window.inputs, window.steps, Some(&mut self.rng))?;
            let l = loss(
                &mut tape,
                OutputLayer::from(&bound),
                ctx,
                &window.targets,
                &self.cfg.objective,
                self.noise,
                &mut self.rng,
            )?;
            if !l.value.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch}, window {i}: loss is {}", l.value)));
            }
            tape.backward(l.loss)?;
            self.model.flush_grads(&tape, &bound);
            sgd_step(self.model.params_mut(), lr, self.cfg.clip)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, window {i}: {e}")))?;
            total.add(l.value * l.tokens as f64);
            tokens += l.tokens;
            state = next;
        }
        if tokens == 0 {
            return Err(Error::Empty("training stream"));
        }
        let validate = epoch.is_multiple_of(self.cfg.eval_every) || epoch == self.cfg.epochs;
        let report = if validate { Some(eval_diagnostics(&*self.model, valid, EvalOptions::default())?) } else { None };
        Ok(EpochRecord {
            epoch,
            loss: total.value() / tokens as f64,
            ppl: report.as_ref().map(|r| r.perp),
            mu_z: report.as_ref().map(|r| r.mu_z),
            sigma_z: report.as_ref().map(|r| r.sigma_z),
            seconds: clock.seconds() - start,
        })
    }
}

/// Runs `cfg.epochs` epochs of [`Trainer::run_epoch`].
pub fn train<C: Clock + ?Sized>(
    model: &mut LanguageModel,
    train: &BatchStream,
    valid: &BatchStream,
    noise: &NoiseDistribution,
    cfg: &TrainConfig,
    clock: &mut C,
) -> Result<TrainLog> {
    let mut trainer = Trainer::new(model, noise, cfg.clone())?;
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        log.records.push(trainer.run_epoch(train, valid, clock)?);
    }
    Ok(log)
}
