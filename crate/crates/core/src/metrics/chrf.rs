use super::ngrams::{char_ngrams, chrf_words, token_ngrams, NgramCounts};
use super::{ChrfConfig, MetricError, MetricScore};

/// Match statistics for one n-gram order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderStats {
    /// Hypothesis n-gram count; zero when the reference has none of this order.
    pub hyp: usize,
    pub reference: usize,
    pub matches: usize,
}

impl OrderStats {
    fn between(hyp: &NgramCounts, reference: &NgramCounts) -> Self {
        let mut matches = 0;
        let mut hyp_total = 0;
        for (gram, &count) in hyp {
            hyp_total += count;
            if let Some(&ref_count) = reference.get(gram) {
                matches += count.min(ref_count);
            }
        }
        OrderStats {
            hyp: if reference.is_empty() { 0 } else { hyp_total },
            reference: reference.values().sum(),
            matches,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        (self.hyp > 0).then(|| self.matches as f64 / self.hyp as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.reference > 0).then(|| self.matches as f64 / self.reference as f64)
    }
}

/// Per-order statistics: character orders `1..=char_order` followed by word
/// orders `1..=word_order`.
pub fn chrf_stats(hypothesis: &str, reference: &str, cfg: &ChrfConfig) -> Vec<OrderStats> {
    let mut stats = Vec::with_capacity(cfg.char_order + cfg.word_order);
    for n in 1..=cfg.char_order {
        stats.push(OrderStats::between(&char_ngrams(hypothesis, n), &char_ngrams(reference, n)));
    }
    if cfg.word_order > 0 {
        let hyp_words = chrf_words(hypothesis);
        let ref_words = chrf_words(reference);
        for n in 1..=cfg.word_order {
            stats.push(OrderStats::between(&token_ngrams(&hyp_words, n), &token_ngrams(&ref_words, n)));
        }
    }
    stats
}

/// chrF++ of `hypothesis` against a single `reference`.
///
/// Precision and recall are averaged over the orders for which both sides
/// produce n-grams; the F-beta score is taken on those averages. A pair with
/// no such order scores 0.
pub fn chrf_pp(hypothesis: &str, reference: &str, cfg: &ChrfConfig) -> Result<MetricScore, MetricError> {
    cfg.validate()?;
    let stats = chrf_stats(hypothesis, reference, cfg);
    Ok(MetricScore::new(f_score(&stats, cfg.beta)))
}

fn f_score(stats: &[OrderStats], beta: f64) -> f64 {
    let factor = beta * beta;
    let mut avg_prec = 0.0;
    let mut avg_rec = 0.0;
    let mut effective = 0usize;
    for s in stats {
        if let (Some(p), Some(r)) = (s.precision(), s.recall()) {
            avg_prec += p;
            avg_rec += r;
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    avg_prec /= effective as f64;
    avg_rec /= effective as f64;
    if avg_prec + avg_rec == 0.0 {
        return 0.0;
    }
    let mut score = (1.0 + factor) * avg_prec * avg_rec;
    score /= factor * avg_prec + avg_rec;
    100.0 * score
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(h: &str, r: &str) -> f64 {
        chrf_pp(h, r, &ChrfConfig::default()).unwrap().value()
    }

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(score("the cat", "the cat"), 100.0);
        assert_eq!(score("abcd", "wxyz"), 0.0);
        assert_eq!(score("", "abc"), 0.0);
        assert_eq!(score("", ""), 0.0);
    }

    #[test]
    fn single_character_identity() {
        assert_eq!(score("x", "x"), 100.0);
    }

    #[test]
    fn hyp_counts_vanish_when_reference_lacks_the_order() {
        let stats = chrf_stats("abcdef", "ab", &ChrfConfig::default());
        assert_eq!(stats[0], OrderStats { hyp: 6, reference: 2, matches: 2 });
        assert_eq!(stats[2], OrderStats { hyp: 0, reference: 0, matches: 0 });
    }

    #[test]
    fn rejects_empty_configuration() {
        let cfg = ChrfConfig { char_order: 0, word_order: 0, beta: 2.0 };
        assert!(chrf_pp("a", "a", &cfg).is_err());
        let cfg = ChrfConfig { beta: 0.0, ..ChrfConfig::default() };
        assert!(chrf_pp("a", "a", &cfg).is_err());
    }

    #[test]
    fn recall_weighting_prefers_longer_hypotheses() {
        // beta = 2 weights recall over precision.
        let long = score("the old farmer saw a dog and a cat", "the old farmer saw a dog");
        let short = score("the old farmer", "the old farmer saw a dog");
        assert!(long > short);
    }
}
