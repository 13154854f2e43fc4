//! Token and video-frame sequence types shared across the pipeline.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const MASK: usize = 3;
pub const CLS: usize = 4;
pub const NUM_SPECIAL_TOKENS: usize = 5;

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL_TOKENS
}

/// Token id sequence. Range checks against a vocabulary happen at corpus
/// load and at embedding lookup, where the vocabulary size is known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<usize>) -> TokenSequence {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        for &id in &self.ids {
            if id >= vocab {
                return Err(Error::VocabRange { id, vocab });
            }
        }
        Ok(())
    }

    /// A translation carries exactly one EOS, at the end.
    pub fn check_translation(&self) -> Result<()> {
        let eos_count = self.ids.iter().filter(|&&id| id == EOS).count();
        if self.ids.is_empty() || eos_count != 1 || *self.ids.last().unwrap() != EOS {
            return Err(Error::invalid(format!(
                "translation must end with its only EOS, got {:?}",
                self.ids
            )));
        }
        Ok(())
    }
}

/// Video frames as a flat row-major [count × frame_dim] buffer. Reads of the
/// frame data are counted so tests can prove a code path never touched the
/// video modality.
#[derive(Debug)]
pub struct VideoFeatureSequence {
    frame_dim: usize,
    data: Vec<f64>,
    reads: AtomicU64,
}

impl VideoFeatureSequence {
    pub fn new(frame_dim: usize, data: Vec<f64>) -> Result<VideoFeatureSequence> {
        if frame_dim == 0 || data.is_empty() || data.len() % frame_dim != 0 {
            return Err(Error::invalid(format!(
                "video data length {} is not a positive multiple of frame_dim {}",
                data.len(),
                frame_dim
            )));
        }
        Ok(VideoFeatureSequence {
            frame_dim,
            data,
            reads: AtomicU64::new(0),
        })
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.frame_dim
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    /// Frame data access. Every call bumps the read counter.
    pub fn frames(&self) -> &[f64] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.data
    }

    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

impl Clone for VideoFeatureSequence {
    fn clone(&self) -> Self {
        VideoFeatureSequence {
            frame_dim: self.frame_dim,
            data: self.data.clone(),
            reads: AtomicU64::new(0),
        }
    }
}

impl PartialEq for VideoFeatureSequence {
    fn eq(&self, other: &Self) -> bool {
        self.frame_dim == other.frame_dim && self.data == other.data
    }
}
