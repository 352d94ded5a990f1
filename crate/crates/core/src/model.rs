//! The scorer `m(w, c) = w·c + b_w` over a two-layer LSTM context encoder.
//!
//! Input embeddings, both LSTM layers and the output table `w` all have
//! width `d`. Each LSTM layer maps `[x; h]` (2d) to the four gates
//! `i, f, o, g` (4d) in that column order. The output table is separate
//! from the input table.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::numerics::{gemm, logsumexp_unchecked, ParamTensor, Tape, Var};
use crate::objectives::squash;
use crate::{Error, Result};

pub const NUM_LAYERS: usize = 2;
/// Half-width of the uniform initializer for every non-bias weight.
pub const INIT_SCALE: f64 = 0.05;

/// Parameter slots, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    Embedding = 0,
    Lstm0Weight,
    Lstm0Bias,
    Lstm1Weight,
    Lstm1Bias,
    OutputWeight,
    OutputBias,
}

pub const PARAM_NAMES: [&str; 7] = [
    "embedding",
    "lstm0.weight",
    "lstm0.bias",
    "lstm1.weight",
    "lstm1.bias",
    "output.weight",
    "output.bias",
];

fn param_shapes(vocab: usize, dim: usize) -> [Vec<usize>; 7] {
    [
        vec![vocab, dim],
        vec![4 * dim, 2 * dim],
        vec![4 * dim],
        vec![4 * dim, 2 * dim],
        vec![4 * dim],
        vec![vocab, dim],
        vec![vocab],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    vocab_size: usize,
    dim: usize,
    dropout: f64,
    squash: bool,
    params: Vec<ParamTensor>,
}

/// Per-layer hidden and cell rows for every batch lane.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub batch: usize,
    pub dim: usize,
    pub hidden: [Vec<f64>; NUM_LAYERS],
    pub cell: [Vec<f64>; NUM_LAYERS],
}

impl EncoderState {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        let z = vec![0.0; batch * dim];
        Self { batch, dim, hidden: [z.clone(), z.clone()], cell: [z.clone(), z] }
    }
}

/// The model's parameters as variables on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    vars: [Var; 7],
}

impl BoundParams {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id as usize]
    }

    /// Variables in [`ParamId`] order, matching [`LanguageModel::params`].
    pub fn vars(&self) -> &[Var; 7] {
        &self.vars
    }
}

impl LanguageModel {
    /// Fresh model: uniform(±0.05) weights, zero LSTM biases and output bias
    /// `-log|V|`, which makes the untrained model nearly self-normalized.
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, dim: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        Self::check_config(vocab_size, dim, dropout)?;
        let shapes = param_shapes(vocab_size, dim);
        let bias = -libm::log(vocab_size as f64);
        let params = shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| match i {
                2 | 4 => ParamTensor::zeros(shape),
                6 => ParamTensor::filled(shape, bias),
                _ => {
                    let n: usize = shape.iter().product();
                    let v = (0..n).map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE)).collect();
                    ParamTensor::new(shape, v).expect("sized from shape")
                }
            })
            .collect();
        Ok(Self { vocab_size, dim, dropout, squash: false, params })
    }

    pub fn from_params(vocab_size: usize, dim: usize, dropout: f64, params: Vec<ParamTensor>) -> Result<Self> {
        Self::check_config(vocab_size, dim, dropout)?;
        let shapes = param_shapes(vocab_size, dim);
        if params.len() != shapes.len() {
            return Err(Error::Shape(alloc::format!("expected 7 parameter tensors, got {}", params.len())));
        }
        for ((p, s), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != s.as_slice() {
                return Err(Error::Shape(alloc::format!("{name}: shape {:?}, expected {s:?}", p.shape())));
            }
            if !p.all_finite() {
                return Err(Error::NonFinite(alloc::format!("{name} holds NaN/Inf")));
            }
        }
        Ok(Self { vocab_size, dim, dropout, squash: false, params })
    }

    fn check_config(vocab_size: usize, dim: usize, dropout: f64) -> Result<()> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Argument("vocabulary size and dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Argument(alloc::format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        Self::check_config(self.vocab_size, self.dim, rate)?;
        self.dropout = rate;
        Ok(())
    }

    /// Whether raw scores pass through `10·tanh(x/5)`.
    pub fn squash(&self) -> bool {
        self.squash
    }

    pub fn set_squash(&mut self, on: bool) {
        self.squash = on;
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &ParamTensor {
        &self.params[id as usize]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id as usize]
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Puts every parameter on `tape`; untracked parameters take no
    /// gradient (evaluation).
    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundParams {
        let vars = core::array::from_fn(|i| {
            let p = &self.params[i];
            let (r, c) = p.matrix_dims();
            tape.leaf(r, c, p.values().to_vec(), track)
        });
        BoundParams { vars }
    }

    /// Adds the tape's parameter gradients into the model.
    pub fn flush_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            tape.flush_grad(v, p);
        }
    }

    /// Runs the encoder over `inputs` (time-major, `steps × batch`).
    ///
    /// Returns the top-layer hidden rows as a `(steps·batch) × d` variable in
    /// the same time-major order, and the detached final state. Dropout is
    /// applied to the embedding output, between layers and to the context,
    /// never to recurrent connections, and only when `dropout_rng` is given.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        state: &EncoderState,
        inputs: &[usize],
        steps: usize,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Var, EncoderState)> {
        let (batch, d) = (state.batch, self.dim);
        if state.dim != d || state.hidden.iter().chain(&state.cell).any(|v| v.len() != batch * d) {
            return Err(Error::Shape(alloc::format!(
                "state is {}×{} but the model has d = {d}",
                state.batch,
                state.dim
            )));
        }
        if inputs.len() != batch * steps || steps == 0 {
            return Err(Error::Shape(alloc::format!(
                "{} input ids for {batch} lanes × {steps} steps",
                inputs.len()
            )));
        }
        if let Some(&bad) = inputs.iter().find(|&&w| w >= self.vocab_size) {
            return Err(Error::Argument(alloc::format!("word id {bad} outside vocabulary")));
        }

        let mut h: [Var; NUM_LAYERS] = core::array::from_fn(|l| tape.constant(batch, d, state.hidden[l].clone()));
        let mut c: [Var; NUM_LAYERS] = core::array::from_fn(|l| tape.constant(batch, d, state.cell[l].clone()));
        let weights = [bound.get(ParamId::Lstm0Weight), bound.get(ParamId::Lstm1Weight)];
        let biases = [bound.get(ParamId::Lstm0Bias), bound.get(ParamId::Lstm1Bias)];
        let embedding = bound.get(ParamId::Embedding);
        let rate = self.dropout;

        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = tape.gather_rows(embedding, &inputs[t * batch..(t + 1) * batch]);
            for layer in 0..NUM_LAYERS {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    x = apply_dropout(tape, x, rate, rng);
                }
                let xh = tape.concat_cols(x, h[layer]);
                let pre = tape.matmul_t(xh, weights[layer]);
                let gates = tape.add_row(pre, biases[layer]);
                let i = tape.cols(gates, 0, d);
                let i = tape.sigmoid(i);
                let f = tape.cols(gates, d, d);
                let f = tape.sigmoid(f);
                let o = tape.cols(gates, 2 * d, d);
                let o = tape.sigmoid(o);
                let g = tape.cols(gates, 3 * d, d);
                let g = tape.tanh(g);
                let keep = tape.mul(f, c[layer]);
                let write = tape.mul(i, g);
                c[layer] = tape.add(keep, write);
                let squashed = tape.tanh(c[layer]);
                h[layer] = tape.mul(o, squashed);
                x = h[layer];
            }
            if let Some(rng) = dropout_rng.as_deref_mut() {
                x = apply_dropout(tape, x, rate, rng);
            }
            outputs.push(x);
        }
        let contexts = tape.concat_rows(&outputs);
        let next = EncoderState {
            batch,
            dim: d,
            hidden: core::array::from_fn(|l| tape.value(h[l]).to_vec()),
            cell: core::array::from_fn(|l| tape.value(c[l]).to_vec()),
        };
        Ok((contexts, next))
    }

    /// Evaluation-mode encoding without gradients. Returns context rows
    /// (time-major, `d` values each) and the carried state.
    pub fn contexts(&self, state: &EncoderState, inputs: &[usize], steps: usize) -> Result<(Vec<f64>, EncoderState)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let (ctx, next) = self.encode::<crate::SeededRng>(&mut tape, &bound, state, inputs, steps, None)?;
        Ok((tape.value(ctx).to_vec(), next))
    }

    /// `w·c + b_w`, squashed when the model was trained with squashing.
    pub fn score(&self, context: &[f64], word: usize) -> f64 {
        let d = self.dim;
        let w = &self.param(ParamId::OutputWeight).values()[word * d..(word + 1) * d];
        let raw = crate::numerics::dot(w, context) + self.param(ParamId::OutputBias).values()[word];
        if self.squash {
            squash(raw)
        } else {
            raw
        }
    }

    /// Scores of every word against each of `rows` context rows.
    pub fn logits(&self, contexts: &[f64]) -> Vec<f64> {
        let (v, d) = (self.vocab_size, self.dim);
        let rows = contexts.len() / d;
        assert_eq!(rows * d, contexts.len(), "context buffer is not a whole number of rows");
        let mut out = vec![0.0; rows * v];
        gemm(rows, d, v, contexts, false, self.param(ParamId::OutputWeight).values(), true, 0.0, &mut out);
        let bias = self.param(ParamId::OutputBias).values();
        for row in out.chunks_mut(v) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
                if self.squash {
                    *x = squash(*x);
                }
            }
        }
        out
    }

    /// `log Z_c = log Σ_w exp(m(w, c))`.
    pub fn log_partition(&self, context: &[f64]) -> f64 {
        logsumexp_unchecked(&self.logits(context))
    }
}

fn apply_dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c).map(|_| if rng.random_bool(rate) { 0.0 } else { keep }).collect();
    let m = tape.constant(r, c, mask);
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::seeded_rng;

    fn random_model(v: usize, d: usize, seed: u64) -> LanguageModel {
        let mut rng = seeded_rng(seed);
        let mut m = LanguageModel::new(v, d, 0.0, &mut rng).unwrap();
        // larger weights than the initializer so scores are far from uniform
        for id in [ParamId::OutputWeight, ParamId::OutputBias, ParamId::Lstm0Bias, ParamId::Lstm1Bias] {
            for x in m.param_mut(id).values_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    #[test]
    fn fresh_bias_and_zero_embeddings_are_uniform() {
        let mut m = LanguageModel::new(10, 4, 0.5, &mut seeded_rng(1)).unwrap();
        assert!(m.param(ParamId::OutputBias).values().iter().all(|&b| b == -libm::log(10.0)));
        m.param_mut(ParamId::OutputWeight).values_mut().fill(0.0);
        let c = [0.3, -0.2, 0.9, 1.0];
        for w in 0..10 {
            assert_eq!(m.score(&c, w), -libm::log(10.0));
        }
        assert!(m.log_partition(&c).abs() < 1e-15);
    }

    #[test]
    fn score_is_a_dot_product() {
        let mut m = LanguageModel::new(3, 2, 0.0, &mut seeded_rng(1)).unwrap();
        m.param_mut(ParamId::OutputWeight).values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        m.param_mut(ParamId::OutputBias).values_mut().fill(0.0);
        assert_eq!(m.score(&[1.0, 0.0], 0), 1.0);
    }

    #[test]
    fn scores_match_naive_loops() {
        let m = random_model(10, 6, 2);
        let c: Vec<f64> = (0..6).map(|i| libm::cos(i as f64)).collect();
        let logits = m.logits(&c);
        let w = m.param(ParamId::OutputWeight).values();
        let b = m.param(ParamId::OutputBias).values();
        for v in 0..10 {
            let mut s = b[v];
            for k in 0..6 {
                s += w[v * 6 + k] * c[k];
            }
            assert!((m.score(&c, v) - s).abs() < 1e-12);
            assert!((logits[v] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn log_partition_matches_direct_sum() {
        let m = random_model(20, 5, 3);
        let c: Vec<f64> = (0..5).map(|i| libm::sin(i as f64 + 0.5)).collect();
        let direct: f64 = (0..20).map(|w| libm::exp(m.score(&c, w))).sum();
        assert!((m.log_partition(&c) - libm::log(direct)).abs() < 1e-10);
    }

    #[test]
    fn single_word_partition_is_its_score() {
        let m = random_model(1, 3, 4);
        let c = [0.1, 0.2, 0.3];
        assert!((m.log_partition(&c) - m.score(&c, 0)).abs() < 1e-15);
    }

    #[test]
    fn score_is_linear_in_context() {
        let m = random_model(7, 4, 5);
        let c1 = [0.3, -0.1, 0.7, 0.2];
        let c2 = [-0.5, 0.4, 0.1, 0.9];
        let (a, b) = (1.7, -0.6);
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let bias = m.param(ParamId::OutputBias).values();
        for (w, &bw) in bias.iter().enumerate() {
            let lhs = m.score(&mix, w) - bw;
            let rhs = a * (m.score(&c1, w) - bw) + b * (m.score(&c2, w) - bw);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lstm_gives_zero_contexts() {
        let mut m = random_model(6, 4, 6);
        for id in [ParamId::Lstm0Weight, ParamId::Lstm0Bias, ParamId::Lstm1Weight, ParamId::Lstm1Bias] {
            m.param_mut(id).values_mut().fill(0.0);
        }
        let (ctx, _) = m.contexts(&EncoderState::zeros(2, 4), &[1, 2, 3, 4, 5, 0], 3).unwrap();
        assert!(ctx.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn carried_state_equals_one_long_call() {
        let m = random_model(12, 5, 7);
        let ids: Vec<usize> = (0..20).map(|i| (i * 5 + 1) % 12).collect(); // 2 lanes × 10 steps
        let (all, end_all) = m.contexts(&EncoderState::zeros(2, 5), &ids, 10).unwrap();
        let (first, mid) = m.contexts(&EncoderState::zeros(2, 5), &ids[..10], 5).unwrap();
        let (second, end_split) = m.contexts(&mid, &ids[10..], 5).unwrap();
        let joined: Vec<f64> = first.iter().chain(&second).copied().collect();
        assert_eq!(all, joined);
        assert_eq!(end_all, end_split);
        let (again, _) = m.contexts(&EncoderState::zeros(2, 5), &ids, 10).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = random_model(5, 4, 8);
        assert!(m.contexts(&EncoderState::zeros(1, 3), &[1, 2], 2).is_err());
        assert!(m.contexts(&EncoderState::zeros(1, 4), &[1, 2, 3], 2).is_err());
        assert!(m.contexts(&EncoderState::zeros(1, 4), &[1, 9], 2).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let m = {
            let mut m = random_model(8, 4, 9);
            m.set_dropout(0.5).unwrap();
            m
        };
        let ids = [1, 2, 3, 4];
        let (a, _) = m.contexts(&EncoderState::zeros(1, 4), &ids, 4).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let mut rng = seeded_rng(1);
        let (c, _) = m.encode(&mut tape, &bound, &EncoderState::zeros(1, 4), &ids, 4, Some(&mut rng)).unwrap();
        assert_ne!(tape.value(c), a.as_slice());
        assert!(tape.value(c).contains(&0.0));
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        // d = 8, T = 5; loss = Σ contexts · fixed projection, so every LSTM
        // weight and the embedding table receive gradient.
        let m = random_model(9, 8, 10);
        let mut params = m.params().to_vec();
        let ids = [3, 1, 4, 1, 5, 2, 6, 5, 3, 5];
        let proj: Vec<f64> = (0..8).map(|i| libm::sin(i as f64 * 0.9)).collect();
        let mut start = EncoderState::zeros(2, 8);
        start.hidden[0].iter_mut().enumerate().for_each(|(i, x)| *x = 0.1 * libm::cos(i as f64));
        let err = grad_check(
            |ps, with_grad| {
                let model = LanguageModel::from_params(9, 8, 0.0, ps.to_vec())?;
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let (ctx, _) = model.encode::<crate::SeededRng>(&mut tape, &bound, &start, &ids, 5, None)?;
                let p = tape.constant(8, 1, proj.clone());
                let y = tape.matmul(ctx, p);
                let y = tape.tanh(y);
                let y = tape.sum(y);
                if with_grad {
                    tape.backward(y)?;
                    for (p, &v) in ps.iter_mut().zip(&bound.vars) {
                        tape.flush_grad(v, p);
                    }
                }
                Ok(tape.scalar(y))
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }
}
