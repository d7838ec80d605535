use super::RoundtripError;
use crate::metrics::{chrf_pp, ChrfConfig};
use crate::policy::{InferenceSession, PolicyParams, Vocab};
use crate::synthdata::{Pair, Sentence, TrigramLm};

/// Greedy translations of `sources` into the language of `tag`.
pub fn translate_greedy(
    sources: &[Sentence],
    params: &PolicyParams,
    vocab: &Vocab,
    tag: usize,
    max_len: usize,
) -> Result<Vec<Sentence>, RoundtripError> {
    let mut session = InferenceSession::new(params, vocab);
    sources.iter().map(|s| Ok(vocab.decode(&session.greedy(&vocab.encode(s), tag, max_len)?.tokens))).collect()
}

/// Mean sentence-level chrF++ (0–100) of greedy forward translations
/// against the held-out references.
pub fn evaluate_forward(
    pairs: &[Pair],
    params: &PolicyParams,
    vocab: &Vocab,
    tag: usize,
    max_len: usize,
    chrf: &ChrfConfig,
) -> Result<f64, RoundtripError> {
    if pairs.is_empty() {
        return Err(RoundtripError::Empty("no evaluation pairs".into()));
    }
    let sources: Vec<Sentence> = pairs.iter().map(|p| p.source.clone()).collect();
    let hyps = translate_greedy(&sources, params, vocab, tag, max_len)?;
    let mut total = 0.0;
    for (h, p) in hyps.iter().zip(pairs) {
        total += chrf_pp(&h.text(), &p.target.text(), chrf)?.value();
    }
    Ok(total / pairs.len() as f64)
}

/// Mean over sentences of the LM's per-token natural-log probability.
pub fn evaluate_fluency(translations: &[Sentence], lm: &TrigramLm) -> Result<f64, RoundtripError> {
    if translations.is_empty() {
        return Err(RoundtripError::Empty("no translations to score".into()));
    }
    Ok(translations.iter().map(|s| lm.score(s)).sum::<f64>() / translations.len() as f64)
}
