//! Question-based sign language translation at desk scale.
//!
//! The crate covers the full pipeline: an f64 autodiff core, text and video
//! embeddings, a small post-norm transformer, sigmoid self-attention
//! weighted fusion, two-stage training (contrastive alignment plus masked
//! reconstruction, then fused translation), a synthetic gesture corpus
//! generator, and BLEU/ROUGE scoring. Everything is deterministic given a
//! seed: fixed op order, ChaCha8 streams, ordered parameter maps.

pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod seq;
pub mod ssaw;
pub mod stage1;
pub mod stage2;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use tensor::{Mode, Tape, Tensor, IGNORE_INDEX};
