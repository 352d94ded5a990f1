//! Self-normalizing neural language models.
//!
//! This crate is the allocation-only core: a small reverse-mode tape over
//! dense `f64` matrices, a two-layer LSTM language model whose scores are
//! `m(w, c) = w·c + b_w`, the five training objectives (softmax, the
//! log-partition–regularized softmax, its sampled approximation, NCE and
//! regularized NCE), the self-normalization diagnostics, and brute-force
//! checks of the NCE self-normalization bounds on small joint
//! distributions.
//!
//! Everything touching files, clocks or the command line lives in the
//! `snlm` companion crate.
#![no_std]
#![forbid(unsafe_op_in_unsafe_fn)]
// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod diagnostics;
mod error;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod theory;
pub mod trainer;

pub use crate::error::{Error, Result};

/// The generator used everywhere a seeded random stream is needed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's standard generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
