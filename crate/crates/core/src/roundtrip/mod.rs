//! Round-trip reinforcement training.
//!
//! Each English source is translated into the target language K times and
//! every forward sample is translated back once. The reconstruction reward
//! of each round trip is standardized within the group and drives a GRPO
//! update of the single shared policy.

mod ablate;
mod eval;
mod train;
mod warmstart;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ablate::{ablate_rewards, AblationMode, AblationRow};
pub use eval::{evaluate_fluency, evaluate_forward, translate_greedy};
pub use train::{train, CurveRow, NoHooks, TrainData, TrainHooks, TrainOutcome, TrainSettings};
pub use warmstart::{parallel_examples, warm_start, Directions, Example, WarmStartConfig};

use crate::grpo::{compute_advantages, GrpoError, ScoredSequence, TrainGroup};
use crate::metrics::{composite_reward, BleuConfig, ChrfConfig, MetricError, RewardWeights};
use crate::policy::{InferenceSession, PolicyError, SampledSequence, SamplingConfig, Vocab, EOS};
use crate::synthdata::{DataError, Sentence};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum RoundtripError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {source}")]
    Diverged { step: usize, source: GrpoError },
    #[error("empty input: {0}")]
    Empty(String),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which generated sequences receive the trajectory's advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditScope {
    /// Only the back-translation tokens.
    BackwardOnly,
    /// Forward and back-translation tokens, each sequence normalized by
    /// its own length.
    #[default]
    FullRoundtrip,
}

/// Reward weights plus the configurations of both metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSettings {
    pub weights: RewardWeights,
    pub chrf: ChrfConfig,
    pub bleu: BleuConfig,
}

impl RewardSettings {
    pub fn validate(&self) -> Result<(), MetricError> {
        self.weights.validate()?;
        self.chrf.validate()?;
        self.bleu.validate()
    }

    /// Reward of a reconstruction against the original source text.
    pub fn score(&self, reconstruction: &str, source: &str) -> Result<f64, MetricError> {
        composite_reward(reconstruction, source, &self.weights, &self.chrf, &self.bleu)
    }
}

/// Language tags of a round trip: source → target → source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LangPair {
    pub source_tag: usize,
    pub target_tag: usize,
}

impl LangPair {
    pub fn new(vocab: &Vocab, source: &str, target: &str) -> Result<Self, PolicyError> {
        Ok(LangPair { source_tag: vocab.lang_tag(source)?, target_tag: vocab.lang_tag(target)? })
    }
}

/// One forward sample, its back-translation and their reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub source: Vec<usize>,
    pub forward: SampledSequence,
    pub backward: SampledSequence,
    pub reconstruction: Sentence,
    pub reward: f64,
}

impl Trajectory {
    /// Forward tokens as fed to the backward pass.
    pub fn forward_content(&self) -> &[usize] {
        strip_eos(&self.forward.tokens)
    }
}

fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// The K trajectories of one source and their advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub source: Sentence,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl Group {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    pub fn to_train_group(&self, pair: LangPair, scope: CreditScope) -> TrainGroup {
        let members = self
            .trajectories
            .iter()
            .map(|t| {
                let backward = ScoredSequence {
                    source: t.forward_content().to_vec(),
                    tag: pair.source_tag,
                    tokens: t.backward.tokens.clone(),
                    old_logprobs: t.backward.model_logprobs.clone(),
                };
                match scope {
                    CreditScope::BackwardOnly => vec![backward],
                    CreditScope::FullRoundtrip => vec![
                        ScoredSequence {
                            source: t.source.clone(),
                            tag: pair.target_tag,
                            tokens: t.forward.tokens.clone(),
                            old_logprobs: t.forward.model_logprobs.clone(),
                        },
                        backward,
                    ],
                }
            })
            .collect();
        TrainGroup { rewards: self.rewards(), advantages: self.advantages.clone(), members }
    }
}

/// Samples `k` round trips of `source` from the session's policy.
///
/// Returns `Ok(None)` for sources that cannot be rolled out (empty or
/// longer than the model's positions); a warning is logged.
#[allow(clippy::too_many_arguments)]
pub fn roundtrip_rollout(
    source: &Sentence,
    k: usize,
    session: &mut InferenceSession,
    vocab: &Vocab,
    sampling: &SamplingConfig,
    pair: LangPair,
    reward: &RewardSettings,
    std_floor: f64,
    rng: &mut impl Rng,
) -> Result<Option<Group>, RoundtripError> {
    if k < 2 {
        return Err(RoundtripError::Config(format!("group size must be at least 2, got {k}")));
    }
    if source.is_empty() {
        log::warn!("skipping empty source sentence");
        return Ok(None);
    }
    let max_source = session.config().max_positions - 1;
    if source.len() > max_source {
        log::warn!("skipping source of {} tokens (limit {max_source})", source.len());
        return Ok(None);
    }
    let ids = vocab.encode(source);
    let text = source.text();
    let mut trajectories = Vec::with_capacity(k);
    for _ in 0..k {
        let forward = session.sample(&ids, pair.target_tag, sampling, rng)?;
        let backward = session.sample(strip_eos(&forward.tokens), pair.source_tag, sampling, rng)?;
        let reconstruction = vocab.decode(&backward.tokens);
        let reward = reward.score(&reconstruction.text(), &text)?;
        trajectories.push(Trajectory { source: ids.clone(), forward, backward, reconstruction, reward });
    }
    let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
    let advantages = compute_advantages(&rewards, std_floor);
    Ok(Some(Group { source: source.clone(), trajectories, advantages }))
}

/// Derives an independent seed for a named stream.
pub fn substream(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
