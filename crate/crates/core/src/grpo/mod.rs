//! Group Relative Policy Optimization.
//!
//! Rewards are standardized within each group of samples that share a
//! prompt, so no value critic is needed. The update maximizes the clipped
//! importance-weighted surrogate minus a KL anchor to a periodically
//! refreshed reference policy.

mod adamw;
mod log;
mod loss;

use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWConfig};
pub use log::{StepLog, StepRecord};
pub use loss::{build_grpo_loss, grpo_loss, reference_terms, LossReport, RefTerms, ScoredSequence, TrainGroup};

use crate::policy::{PolicyError, PolicyParams};
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid GRPO configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no groups to optimize")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("NaN gradient in parameter {param:?} at index {index}")]
    NanGradient { param: String, index: usize },
    #[error("optimizer state does not match the parameters: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the KL penalty is weighted inside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlWeighting {
    /// `β·kl_t` inside the length-normalized token average.
    PerToken,
    /// `β·Σ_t kl_t` once per sequence, not length-normalized.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `exp(ref − cur) − (ref − cur) − 1` on the sampled token.
    K3,
    /// `Σ_v π_θ(v)·(log π_θ(v) − log π_ref(v))` over the whole vocabulary.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub ref_update_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub advantage_std_floor: f64,
    pub kl_weighting: KlWeighting,
    pub kl_estimator: KlEstimator,
    pub adamw: AdamWConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 2e-6,
            ref_update_every: 16,
            epochs: 2,
            batch_size: 2,
            advantage_std_floor: 1e-6,
            kl_weighting: KlWeighting::PerToken,
            kl_estimator: KlEstimator::K3,
            adamw: AdamWConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.ref_update_every == 0 {
            return bad("ref_update_every must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.advantage_std_floor.is_nan() || self.advantage_std_floor < 0.0 {
            return bad("advantage_std_floor must be non-negative");
        }
        self.adamw.validate()
    }
}

/// Group-standardized advantages using the population standard deviation.
/// Groups whose spread is below `std_floor` get all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < std_floor || std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), GrpoError> {
    if a.len() != b.len() {
        return Err(GrpoError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Per-token importance ratios `exp(new − old)`.
pub fn token_ratios(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<Vec<f64>, GrpoError> {
    same_len(new_logprobs, old_logprobs)?;
    Ok(new_logprobs.iter().zip(old_logprobs).map(|(n, o)| (n - o).exp()).collect())
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)` per token.
pub fn clipped_surrogate(ratios: &[f64], advantage: f64, eps: f64) -> Vec<f64> {
    ratios.iter().map(|&r| (r * advantage).min(r.clamp(1.0 - eps, 1.0 + eps) * advantage)).collect()
}

/// Per-token k3 estimate of `KL(π_θ ‖ π_ref)`.
pub fn kl_penalty(cur_logprobs: &[f64], ref_logprobs: &[f64]) -> Result<Vec<f64>, GrpoError> {
    same_len(cur_logprobs, ref_logprobs)?;
    Ok(cur_logprobs.iter().zip(ref_logprobs).map(|(&c, &r)| k3(c, r)).collect())
}

pub(crate) fn k3(cur: f64, reference: f64) -> f64 {
    let d = reference - cur;
    // exp_m1 keeps the estimate exactly zero at d = 0 and accurate near it.
    (d.exp_m1() - d).max(0.0)
}

/// Exact `KL(cur ‖ ref)` between two log-distributions over one support.
pub fn exact_kl(cur_log: &[f64], ref_log: &[f64]) -> Result<f64, GrpoError> {
    same_len(cur_log, ref_log)?;
    Ok(cur_log.iter().zip(ref_log).filter(|(c, _)| c.is_finite()).map(|(&c, &r)| c.exp() * (c - r)).sum())
}

/// Old-policy and reference-policy snapshots.
#[derive(Debug, Clone)]
pub struct Lifecycle {
    pub old: PolicyParams,
    pub reference: PolicyParams,
    ref_syncs: usize,
}

impl Lifecycle {
    pub fn new(params: &PolicyParams) -> Self {
        Lifecycle { old: params.snapshot(), reference: params.snapshot(), ref_syncs: 0 }
    }

    /// Freezes the policy that is about to generate rollouts.
    pub fn sync_old(&mut self, params: &PolicyParams) {
        self.old = params.snapshot();
    }

    /// Replaces the reference after every `every`-th completed step.
    pub fn maybe_sync_ref(&mut self, step: usize, every: usize, params: &PolicyParams) -> bool {
        if step > 0 && step.is_multiple_of(every) {
            self.reference = params.snapshot();
            self.ref_syncs += 1;
            true
        } else {
            false
        }
    }

    pub fn ref_syncs(&self) -> usize {
        self.ref_syncs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[5.0; 4], 1e-6), vec![0.0; 4]);
        let a = compute_advantages(&[1.0, 2.0, 3.0], 1e-6);
        let s = 1.5f64.sqrt();
        for (x, e) in a.iter().zip([-s, 0.0, s]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert_eq!(compute_advantages(&[0.0, 1.0], 1e-6), vec![-1.0, 1.0]);
        assert_eq!(compute_advantages(&[0.3, 0.3 + 1e-9], 1e-6), vec![0.0, 0.0]);
    }

    #[test]
    fn ratio_surrogate_and_kl_examples() {
        assert_eq!(token_ratios(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), vec![1.0, 1.0]);
        let r = token_ratios(&[-1.0 + 2f64.ln()], &[-1.0]).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-12);
        assert!(token_ratios(&[0.0], &[]).is_err());

        let s = clipped_surrogate(&[1.5, 0.5, 1.0], 1.0, 0.2);
        assert!((s[0] - 1.2).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12 && s[2] == 1.0);
        let s = clipped_surrogate(&[0.5, 1.0], -1.0, 0.2);
        assert!((s[0] + 0.8).abs() < 1e-12 && s[1] == -1.0);

        assert_eq!(kl_penalty(&[-0.3, -2.0], &[-0.3, -2.0]).unwrap(), vec![0.0, 0.0]);
        let k = kl_penalty(&[0.0], &[-1.0]).unwrap()[0];
        // exp(-1) - (-1) - 1
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        let k = kl_penalty(&[-1.0], &[0.0]).unwrap()[0];
        assert!((k - (1f64.exp() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_kl_of_identical_distributions_is_zero() {
        let d = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln(), f64::NEG_INFINITY];
        assert_eq!(exact_kl(&d, &d).unwrap(), 0.0);
        let q = [0.25f64.ln(), 0.5f64.ln(), 0.25f64.ln(), f64::NEG_INFINITY];
        let expected = 0.5 * 2f64.ln() + 0.25 * 0.5f64.ln();
        assert!((exact_kl(&d, &q).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn lifecycle_syncs_on_multiples() {
        use rand::SeedableRng;
        let cfg = crate::policy::ModelConfig {
            vocab_size: 8,
            d_model: 4,
            heads: 1,
            d_ff: 4,
            max_positions: 4,
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p0 = PolicyParams::init(cfg.clone(), &mut rng).unwrap();
        let p1 = PolicyParams::init(cfg, &mut rng).unwrap();
        let mut lc = Lifecycle::new(&p0);
        assert!(!lc.maybe_sync_ref(15, 16, &p1));
        assert_eq!(lc.reference, p0);
        assert!(lc.maybe_sync_ref(16, 16, &p1));
        assert_eq!(lc.reference, p1);
        for step in 17..=100 {
            lc.maybe_sync_ref(step, 16, &p1);
        }
        assert_eq!(lc.ref_syncs(), 100 / 16);
        lc.sync_old(&p1);
        assert_eq!(lc.old, p1);
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig { group_size: 1, ..Default::default() }.validate().is_err());
        assert!(GrpoConfig { clip_epsilon: 1.0, ..Default::default() }.validate().is_err());
        assert!(GrpoConfig { kl_beta: -0.1, ..Default::default() }.validate().is_err());
        assert!(GrpoConfig { ref_update_every: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rewards in proptest::collection::vec(0.0f64..1.0, 2..16)) {
            let a = compute_advantages(&rewards, 1e-6);
            let n = a.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std >= 1e-6 {
                let am = a.iter().sum::<f64>() / n;
                let asd = (a.iter().map(|x| (x - am).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(am.abs() <= 1e-9);
                prop_assert!((asd - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn k3_is_non_negative(cur in -30.0f64..0.0, reference in -30.0f64..0.0) {
            let k = kl_penalty(&[cur], &[reference]).unwrap()[0];
            prop_assert!(k >= 0.0);
            if (reference - cur).abs() > 1e-6 {
                prop_assert!(k > 0.0);
            }
            prop_assert_eq!(kl_penalty(&[cur], &[cur]).unwrap()[0], 0.0);
        }
    }
}
