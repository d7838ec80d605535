//! Small multilingual encoder-decoder translation policy.
//!
//! One parameter set serves every direction; the target language is chosen
//! by a tag token. Sampling filters (temperature, top-k, top-p) only shape
//! generation; [`sequence_logprobs`] and training use the unfiltered model
//! distribution.

mod model;
mod sampling;
mod vocab;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use model::{
    decode_logits, encode, output_mask, teacher_forced, Bound, DecodeCache, ModelConfig, PolicyParams, TeacherForced,
};
pub use sampling::{filtered_distribution, SampledSequence, SamplingConfig};
pub use vocab::{lang_tag_token, Vocab, BOS, EOS, PAD, UNK};

use crate::tensor::checkpoint::{Checkpoint, CheckpointError};
use crate::tensor::{kernels, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    UnknownId { id: usize, vocab_size: usize },
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
    #[error("sequence of length {len} exceeds the model's {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("target sequence is empty")]
    EmptySequence,
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {0}: {1}")]
    Io(String, std::io::Error),
}

/// Inference against one parameter snapshot.
///
/// Parameters are copied onto a no-grad tape once; each call records its
/// nodes after them and discards them on return.
pub struct InferenceSession {
    cfg: ModelConfig,
    tape: Tape,
    bound: Bound,
    mask: Var,
    base: usize,
}

impl InferenceSession {
    pub fn new(params: &PolicyParams, vocab: &Vocab) -> Self {
        let mut tape = Tape::no_grad();
        let bound = params.bind(&mut tape, false);
        let mask = output_mask(&mut tape, params.config.vocab_size, &vocab.unemittable());
        let base = tape.len();
        InferenceSession { cfg: params.config.clone(), tape, bound, mask, base }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Encoder output `[|source|+1, d]`.
    pub fn encode(&mut self, source: &[usize], tag: usize) -> Result<Tensor, PolicyError> {
        let out = encode(&mut self.tape, &self.bound, &self.cfg, source, tag).map(|v| self.tape.tensor(v));
        self.tape.truncate(self.base);
        out
    }

    pub fn sample(
        &mut self,
        source: &[usize],
        tag: usize,
        cfg: &SamplingConfig,
        rng: &mut impl Rng,
    ) -> Result<SampledSequence, PolicyError> {
        let out = self.generate(source, tag, cfg, rng);
        self.tape.truncate(self.base);
        out
    }

    /// Argmax decoding; ties go to the lower id.
    pub fn greedy(&mut self, source: &[usize], tag: usize, max_len: usize) -> Result<SampledSequence, PolicyError> {
        // A point-mass distribution ignores the draw, so any stream will do.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.sample(source, tag, &SamplingConfig::greedy(max_len), &mut rng)
    }

    fn generate(
        &mut self,
        source: &[usize],
        tag: usize,
        cfg: &SamplingConfig,
        rng: &mut impl Rng,
    ) -> Result<SampledSequence, PolicyError> {
        cfg.validate()?;
        if cfg.max_len > self.cfg.max_positions {
            return Err(PolicyError::SequenceTooLong { len: cfg.max_len, max: self.cfg.max_positions });
        }
        let t = &mut self.tape;
        let enc = encode(t, &self.bound, &self.cfg, source, tag)?;
        let mut cache = DecodeCache::new(t, &self.bound, &self.cfg, enc)?;
        let mut seq = SampledSequence {
            tokens: Vec::new(),
            sample_logprobs: Vec::new(),
            model_logprobs: Vec::new(),
            truncated: false,
        };
        let mut input = BOS;
        let mut log_probs = vec![0.0; self.cfg.vocab_size];
        for _ in 0..cfg.max_len {
            let logits = cache.step(t, &self.bound, &self.cfg, input, self.mask)?;
            let row = t.value(logits);
            let dist = filtered_distribution(row, cfg);
            let (token, p) = sampling::draw(&dist, rng);
            kernels::log_softmax_into(row, &mut log_probs);
            seq.tokens.push(token);
            seq.sample_logprobs.push(p.ln());
            seq.model_logprobs.push(log_probs[token]);
            if token == EOS {
                return Ok(seq);
            }
            input = token;
        }
        seq.truncated = true;
        Ok(seq)
    }

    /// Unfiltered teacher-forced log-probability of each target token.
    pub fn sequence_logprobs(
        &mut self,
        source: &[usize],
        tag: usize,
        targets: &[usize],
    ) -> Result<Vec<f64>, PolicyError> {
        let out = teacher_forced(&mut self.tape, &self.bound, &self.cfg, source, tag, targets, self.mask)
            .map(|tf| self.tape.value(tf.token_log_probs).to_vec());
        self.tape.truncate(self.base);
        out
    }

    /// Full unfiltered log-distribution at each target position, `[T][V]`.
    pub fn sequence_log_dists(
        &mut self,
        source: &[usize],
        tag: usize,
        targets: &[usize],
    ) -> Result<Vec<Vec<f64>>, PolicyError> {
        let v = self.cfg.vocab_size;
        let out = teacher_forced(&mut self.tape, &self.bound, &self.cfg, source, tag, targets, self.mask)
            .map(|tf| self.tape.value(tf.log_probs).chunks(v).map(<[f64]>::to_vec).collect());
        self.tape.truncate(self.base);
        out
    }
}

/// Deterministic encoder representation of `source` for target `tag`.
pub fn encode_prompt(
    source: &[usize],
    tag: usize,
    params: &PolicyParams,
    vocab: &Vocab,
) -> Result<Tensor, PolicyError> {
    InferenceSession::new(params, vocab).encode(source, tag)
}

/// Samples one sequence; reproducible from `cfg.seed`.
pub fn sample(
    source: &[usize],
    tag: usize,
    params: &PolicyParams,
    vocab: &Vocab,
    cfg: &SamplingConfig,
) -> Result<SampledSequence, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    InferenceSession::new(params, vocab).sample(source, tag, cfg, &mut rng)
}

pub fn sequence_logprobs(
    tokens: &[usize],
    source: &[usize],
    tag: usize,
    params: &PolicyParams,
    vocab: &Vocab,
) -> Result<Vec<f64>, PolicyError> {
    InferenceSession::new(params, vocab).sequence_logprobs(source, tag, tokens)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyMeta {
    kind: String,
    model: ModelConfig,
    vocab: vocab::VocabFile,
    extra: serde_json::Value,
}

const POLICY_KIND: &str = "policy";

/// A policy checkpoint: parameters, vocabulary and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub params: PolicyParams,
    pub vocab: Vocab,
    pub extra: serde_json::Value,
}

impl PolicyCheckpoint {
    pub fn to_container(&self) -> Checkpoint {
        let meta = PolicyMeta {
            kind: POLICY_KIND.into(),
            model: self.params.config.clone(),
            vocab: self.vocab.to_file(),
            extra: self.extra.clone(),
        };
        let mut ck = Checkpoint::new(serde_json::to_string(&meta).expect("metadata serializes"));
        for (name, t) in self.params.named() {
            let mut t = t.clone();
            t.zero_grad();
            ck.push(name, t);
        }
        ck
    }

    pub fn from_container(ck: Checkpoint) -> Result<Self, PolicyError> {
        let meta: PolicyMeta =
            serde_json::from_str(&ck.meta).map_err(|e| CheckpointError::Corrupt(format!("policy metadata: {e}")))?;
        if meta.kind != POLICY_KIND {
            return Err(CheckpointError::Corrupt(format!("expected a policy checkpoint, found {:?}", meta.kind)).into());
        }
        let vocab = Vocab::from_file(meta.vocab)?;
        if vocab.len() != meta.model.vocab_size {
            return Err(PolicyError::InvalidConfig("vocabulary size disagrees with the model".into()));
        }
        let params = PolicyParams::from_named(meta.model, ck.tensors)?;
        Ok(PolicyCheckpoint { params, vocab, extra: meta.extra })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        PolicyCheckpoint::from_container(Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests;
