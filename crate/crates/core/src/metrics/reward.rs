use serde::{Deserialize, Serialize};

use super::{chrf_pp, sentence_bleu, BleuConfig, ChrfConfig, MetricError};

/// Mixing weights of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda_chrf: f64,
    pub lambda_bleu: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda_chrf: 0.5, lambda_bleu: 0.5 }
    }
}

impl RewardWeights {
    pub fn new(lambda_chrf: f64, lambda_bleu: f64) -> Result<Self, MetricError> {
        let w = RewardWeights { lambda_chrf, lambda_bleu };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.lambda_chrf) || !ok(self.lambda_bleu) {
            return Err(MetricError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        if self.lambda_chrf == 0.0 && self.lambda_bleu == 0.0 {
            return Err(MetricError::InvalidWeights("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Upper bound of the reward.
    pub fn max_reward(&self) -> f64 {
        self.lambda_chrf + self.lambda_bleu
    }
}

/// Reconstruction reward `λ_chrF·chrF++/100 + λ_BLEU·BLEU/100` of a
/// back-translation against the original source.
pub fn composite_reward(
    reconstruction: &str,
    source: &str,
    weights: &RewardWeights,
    chrf_cfg: &ChrfConfig,
    bleu_cfg: &BleuConfig,
) -> Result<f64, MetricError> {
    weights.validate()?;
    let chrf = chrf_pp(reconstruction, source, chrf_cfg)?;
    let bleu = sentence_bleu(reconstruction, source, bleu_cfg)?;
    Ok(weights.lambda_chrf * chrf.unit() + weights.lambda_bleu * bleu.score.unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reward(h: &str, r: &str, w: RewardWeights) -> f64 {
        composite_reward(h, r, &w, &ChrfConfig::default(), &BleuConfig::default()).unwrap()
    }

    #[test]
    fn bounds_at_the_extremes() {
        let w = RewardWeights::default();
        assert!((reward("the farmer saw a dog .", "the farmer saw a dog .", w) - 1.0).abs() < 1e-12);
        assert_eq!(reward("abcd", "wxyz", w), 0.0);
    }

    #[test]
    fn chrf_only_weights_reduce_to_chrf() {
        let w = RewardWeights::new(1.0, 0.0).unwrap();
        let (h, r) = ("the old farmer saw a cat", "the farmer saw a dog");
        let chrf = chrf_pp(h, r, &ChrfConfig::default()).unwrap().value();
        assert_eq!(reward(h, r, w), chrf / 100.0);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        assert!(RewardWeights::new(0.0, 0.0).is_err());
        assert!(RewardWeights::new(-0.1, 1.0).is_err());
        assert!(RewardWeights::new(f64::NAN, 1.0).is_err());
    }
}
