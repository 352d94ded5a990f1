//! Text ingestion: vocabulary, unigram noise, minibatch windows and the
//! fill-in-the-gap task format.

mod batch;
mod completion;
mod noise;
pub mod synthetic;
mod vocab;

pub use batch::{batchify, BatchStream, Window};
pub use completion::{parse_completions, CompletionItem, NUM_CANDIDATES};
pub use noise::{sample_noise, NoiseDistribution};
pub use vocab::{Vocabulary, EOS, GAP, UNK};
