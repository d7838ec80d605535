use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    /// Most tokens generated, `eos` included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 1.8, top_k: 100, top_p: 0.95, max_len: 64, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }

    /// Deterministic argmax decoding with the same length limit.
    pub fn greedy(max_len: usize) -> Self {
        SamplingConfig { temperature: 1.0, top_k: 1, top_p: 1.0, max_len, seed: 0 }
    }
}

/// One generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    /// Generated ids, ending in `eos` unless truncated.
    pub tokens: Vec<usize>,
    /// Log-probabilities under the filtered, renormalized sampling
    /// distribution.
    pub sample_logprobs: Vec<f64>,
    /// Log-probabilities under the unfiltered model distribution; these are
    /// the frozen old-policy values for importance ratios.
    pub model_logprobs: Vec<f64>,
    /// `max_len` reached without `eos`.
    pub truncated: bool,
}

impl SampledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Descending by value, ties to the lower id.
fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The sampling distribution for one step: logits scaled by
/// `1/temperature`, the `top_k` best kept, softmax over those, then the
/// smallest prefix whose mass reaches `top_p`, renormalized.
///
/// Returned in descending probability order. Ids with −∞ logits never
/// appear.
pub fn filtered_distribution(logits: &[f64], cfg: &SamplingConfig) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> =
        logits.iter().enumerate().filter(|(_, l)| l.is_finite()).map(|(i, &l)| (i, l / cfg.temperature)).collect();
    if cand.is_empty() {
        return cand;
    }
    if cfg.top_k < cand.len() {
        cand.select_nth_unstable_by(cfg.top_k - 1, rank);
        cand.truncate(cfg.top_k);
    }
    cand.sort_by(rank);
    let max = cand[0].1;
    let mut total = 0.0;
    for c in cand.iter_mut() {
        c.1 = (c.1 - max).exp();
        total += c.1;
    }
    for c in cand.iter_mut() {
        c.1 /= total;
    }
    if cfg.top_p < 1.0 {
        let mut cum = 0.0;
        let mut keep = cand.len();
        for (i, c) in cand.iter().enumerate() {
            cum += c.1;
            if cum >= cfg.top_p {
                keep = i + 1;
                break;
            }
        }
        cand.truncate(keep);
        let kept: f64 = cand.iter().map(|c| c.1).sum();
        for c in cand.iter_mut() {
            c.1 /= kept;
        }
    }
    cand
}

/// Draws from a distribution produced by [`filtered_distribution`].
pub(crate) fn draw(dist: &[(usize, f64)], rng: &mut impl Rng) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for &(id, p) in dist {
        cum += p;
        if u < cum {
            return (id, p);
        }
    }
    *dist.last().expect("distribution is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_one_is_a_point_mass_on_the_argmax() {
        let cfg = SamplingConfig { top_k: 1, ..SamplingConfig::default() };
        let d = filtered_distribution(&[0.3, 2.0, f64::NEG_INFINITY, 2.0], &cfg);
        assert_eq!(d, vec![(1, 1.0)]);
    }

    #[test]
    fn nucleus_keeps_the_smallest_sufficient_prefix() {
        let logits = [3.0f64.ln(), 2.0f64.ln(), 1.0f64.ln(), 0.0];
        // Probabilities before the nucleus cut are 3/7, 2/7, 1/7, 1/7.
        let cfg = SamplingConfig { temperature: 1.0, top_k: 10, top_p: 0.7, ..SamplingConfig::default() };
        let d = filtered_distribution(&logits, &cfg);
        assert_eq!(d.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((d[0].1 - 0.6).abs() < 1e-12 && (d[1].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn temperature_flattens() {
        let hot = SamplingConfig { temperature: 2.0, top_k: 10, top_p: 1.0, ..SamplingConfig::default() };
        let d = filtered_distribution(&[2.0, 0.0], &hot);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((d[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        for bad in [
            SamplingConfig { temperature: 0.0, ..SamplingConfig::default() },
            SamplingConfig { top_k: 0, ..SamplingConfig::default() },
            SamplingConfig { top_p: 0.0, ..SamplingConfig::default() },
            SamplingConfig { top_p: 1.5, ..SamplingConfig::default() },
            SamplingConfig { max_len: 0, ..SamplingConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    proptest! {
        #[test]
        fn filtered_distribution_is_valid(
            logits in proptest::collection::vec(-20.0f64..20.0, 1..200),
            temperature in 0.1f64..4.0,
            top_k in 1usize..150,
            top_p in 0.01f64..=1.0,
        ) {
            let cfg = SamplingConfig { temperature, top_k, top_p, ..SamplingConfig::default() };
            let d = filtered_distribution(&logits, &cfg);
            prop_assert!(!d.is_empty() && d.len() <= top_k);
            prop_assert!(d.iter().all(|c| c.1 >= 0.0));
            let total: f64 = d.iter().map(|c| c.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}
