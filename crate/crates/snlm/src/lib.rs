//! Files, checkpoints and the `snlm` command line on top of `snlm-core`.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod manifest;
pub mod output;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use manifest::{Manifest, ManifestError};
