//! Translation quality metrics: chrF++, sentence-level BLEU and the composite
//! round-trip reward built from them.
//!
//! Both metrics reproduce the community reference scorer bit-for-bit in
//! structure (tokenization, effective-order handling, smoothing) so that the
//! committed conformance fixtures can be matched to 1e-4.

mod bleu;
mod chrf;
pub mod fixtures;
mod ngrams;
mod reward;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{sentence_bleu, tokenize_13a, BleuScore};
pub use chrf::{chrf_pp, chrf_stats, OrderStats};
pub use ngrams::{char_ngrams, chrf_words, word_ngrams, NgramCounts};
pub use reward::{composite_reward, RewardWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid chrF configuration: {0}")]
    InvalidChrf(String),
    #[error("invalid BLEU configuration: {0}")]
    InvalidBleu(String),
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
}

/// A metric value on the 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MetricScore(f64);

impl MetricScore {
    pub fn new(value: f64) -> Self {
        debug_assert!((0.0..=100.0 + 1e-9).contains(&value), "score {value} out of range");
        MetricScore(value.clamp(0.0, 100.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The score rescaled to [0, 1].
    pub fn unit(self) -> f64 {
        self.0 / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChrfConfig {
    /// Maximum character n-gram length.
    pub char_order: usize,
    /// Maximum word n-gram length; 0 gives plain chrF.
    pub word_order: usize,
    /// Recall weight.
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        ChrfConfig { char_order: 6, word_order: 2, beta: 2.0 }
    }
}

impl ChrfConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.char_order + self.word_order == 0 {
            return Err(MetricError::InvalidChrf("char_order + word_order must be positive".into()));
        }
        if self.char_order < 1 {
            return Err(MetricError::InvalidChrf("char_order must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MetricError::InvalidChrf(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    None,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BleuConfig {
    pub max_order: usize,
    pub effective_order: bool,
    pub smoothing: BleuSmoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig { max_order: 4, effective_order: true, smoothing: BleuSmoothing::Exponential }
    }
}

impl BleuConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_order < 1 {
            return Err(MetricError::InvalidBleu("max_order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Whitespace as understood by Python's `str.split()`, which the reference
/// scorer uses everywhere it splits text.
pub(crate) fn is_split_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub(crate) fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(is_split_space).filter(|w| !w.is_empty())
}
