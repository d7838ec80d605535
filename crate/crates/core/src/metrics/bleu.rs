use std::sync::OnceLock;

use regex::Regex;

use super::ngrams::token_ngrams;
use super::{is_split_space, split_words, BleuConfig, BleuSmoothing, MetricError, MetricScore};

/// Sentence-level BLEU with its sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: MetricScore,
    /// Set when the hypothesis has no tokens; the score is then 0.
    pub degenerate: bool,
    /// Per-order precisions on the 0–100 scale (after smoothing).
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuScore {
    pub fn value(&self) -> f64 {
        self.score.value()
    }
}

struct Rules {
    punct: Regex,
    period_comma_after: Regex,
    period_comma_before: Regex,
    dash: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        punct: Regex::new(r"([\x20-\x26\x28-\x2B\x2F\x3A-\x40\x5B-\x60\x7B-\x7E])").unwrap(),
        period_comma_after: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// The mteval-v13a tokenizer used for BLEU.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.trim_end_matches(is_split_space).replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let r = rules();
    let line = format!(" {line} ");
    let line = r.punct.replace_all(&line, " ${1} ");
    let line = r.period_comma_after.replace_all(&line, "${1} ${2} ");
    let line = r.period_comma_before.replace_all(&line, " ${1} ${2}");
    let line = r.dash.replace_all(&line, "${1} ${2} ");
    split_words(&line).map(str::to_string).collect()
}

/// Floored logarithm: log(0) maps to a huge negative constant instead of -inf.
fn floored_ln(x: f64) -> f64 {
    if x == 0.0 {
        -9_999_999_999.0
    } else {
        x.ln()
    }
}

/// Sentence BLEU of `hypothesis` against one `reference`.
///
/// With `effective_order`, orders the hypothesis is too short to contain are
/// left out of the geometric mean. Exponential smoothing replaces the k-th
/// zero-match precision at order n by `100 / (2^k * total_n)`.
pub fn sentence_bleu(hypothesis: &str, reference: &str, cfg: &BleuConfig) -> Result<BleuScore, MetricError> {
    cfg.validate()?;
    let hyp = tokenize_13a(hypothesis);
    let reference = tokenize_13a(reference);
    let order = cfg.max_order;

    let mut correct = vec![0usize; order];
    let mut total = vec![0usize; order];
    for n in 1..=order {
        let ref_grams = token_ngrams(&reference, n);
        for (gram, count) in token_ngrams(&hyp, n) {
            total[n - 1] += count;
            if let Some(&rc) = ref_grams.get(&gram) {
                correct[n - 1] += count.min(rc);
            }
        }
    }

    let (hyp_len, ref_len) = (hyp.len(), reference.len());
    let brevity_penalty = if hyp_len < ref_len {
        if hyp_len > 0 {
            (1.0 - ref_len as f64 / hyp_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };

    let mut precisions = vec![0.0; order];
    let mut result = BleuScore {
        score: MetricScore::new(0.0),
        degenerate: hyp_len == 0,
        precisions: Vec::new(),
        brevity_penalty,
        hyp_len,
        ref_len,
    };
    if correct.iter().all(|&c| c == 0) {
        result.precisions = precisions;
        return Ok(result);
    }

    let mut smooth = 1.0f64;
    let mut effective = order;
    for n in 1..=order {
        if total[n - 1] == 0 {
            break;
        }
        if cfg.effective_order {
            effective = n;
        }
        if correct[n - 1] == 0 {
            if cfg.smoothing == BleuSmoothing::Exponential {
                smooth *= 2.0;
                precisions[n - 1] = 100.0 / (smooth * total[n - 1] as f64);
            }
        } else {
            precisions[n - 1] = 100.0 * correct[n - 1] as f64 / total[n - 1] as f64;
        }
    }

    let log_sum: f64 = precisions[..effective].iter().map(|&p| floored_ln(p)).sum();
    let score = brevity_penalty * (log_sum / effective as f64).exp();
    result.score = MetricScore::new(score);
    result.precisions = precisions;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bleu(h: &str, r: &str) -> BleuScore {
        sentence_bleu(h, r, &BleuConfig::default()).unwrap()
    }

    #[test]
    fn identical_scores_full_marks() {
        assert!((bleu("a b c d", "a b c d").value() - 100.0).abs() < 1e-9);
        assert!((bleu("x", "x").value() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_hypothesis_is_degenerate() {
        let s = bleu("", "a b");
        assert_eq!(s.value(), 0.0);
        assert!(s.degenerate);
        assert!(!bleu("a", "a b").degenerate);
    }

    #[test]
    fn tokenizer_matches_13a_rules() {
        assert_eq!(tokenize_13a("Hello, world!"), vec!["Hello", ",", "world", "!"]);
        assert_eq!(tokenize_13a("3.14 and 1,000"), vec!["3.14", "and", "1,000"]);
        assert_eq!(tokenize_13a("end."), vec!["end", "."]);
        assert_eq!(tokenize_13a("it's co-op"), vec!["it's", "co-op"]);
        assert_eq!(tokenize_13a("12-3"), vec!["12", "-", "3"]);
        assert_eq!(tokenize_13a("a&amp;b"), vec!["a", "&", "b"]);
    }

    #[test]
    fn brevity_penalty_applies_to_short_hypotheses() {
        let s = bleu("a b", "a b c d");
        assert!((s.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-15);
        assert!((s.value() - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn without_smoothing_a_missing_order_zeroes_the_score() {
        let cfg = BleuConfig { smoothing: BleuSmoothing::None, effective_order: false, max_order: 4 };
        let s = sentence_bleu("a b c", "a b c", &cfg).unwrap();
        assert!(s.value() < 1e-12);
    }
}
