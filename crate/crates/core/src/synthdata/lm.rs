use std::collections::HashMap;

use super::{DataError, Sentence};

pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Context id for positions before the sentence start.
const START: u32 = u32::MAX;

/// Add-k smoothed trigram language model over a closed vocabulary.
///
/// The predicted vocabulary is every training token plus `</s>` and `<unk>`;
/// unseen tokens are scored as `<unk>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigramLm {
    add_k: f64,
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    trigrams: HashMap<(u32, u32, u32), u32>,
    contexts: HashMap<(u32, u32), u32>,
}

pub fn train_trigram_lm(corpus: &[Sentence], add_k: f64) -> Result<TrigramLm, DataError> {
    if corpus.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    if !(add_k > 0.0 && add_k.is_finite()) {
        return Err(DataError::InvalidSmoothing(add_k));
    }
    let mut tokens: Vec<String> = corpus.iter().flat_map(|s| s.tokens().iter().cloned()).collect();
    tokens.sort();
    tokens.dedup();
    tokens.retain(|t| t != END_TOKEN && t != UNK_TOKEN);
    tokens.push(END_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    let ids: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut lm = TrigramLm { add_k, ids, tokens, trigrams: HashMap::new(), contexts: HashMap::new() };
    for s in corpus {
        let seq = lm.ids_with_end(s);
        let (mut u, mut v) = (START, START);
        for w in seq {
            *lm.trigrams.entry((u, v, w)).or_insert(0) += 1;
            *lm.contexts.entry((u, v)).or_insert(0) += 1;
            u = v;
            v = w;
        }
    }
    Ok(lm)
}

impl TrigramLm {
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    /// Predictable tokens in id order, ending with `</s>` and `<unk>`.
    pub fn vocabulary(&self) -> &[String] {
        &self.tokens
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or_else(|| self.ids[UNK_TOKEN])
    }

    fn ids_with_end(&self, s: &Sentence) -> Vec<u32> {
        let mut out: Vec<u32> = s.tokens().iter().map(|t| self.id(t)).collect();
        out.push(self.ids[END_TOKEN]);
        out
    }

    fn prob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        let c = self.trigrams.get(&(u, v, w)).copied().unwrap_or(0) as f64;
        let ctx = self.contexts.get(&(u, v)).copied().unwrap_or(0) as f64;
        (c + self.add_k) / (ctx + self.add_k * self.vocab_size() as f64)
    }

    /// `p(w | u v)`; `None` context entries stand for the sentence start.
    pub fn prob(&self, u: Option<&str>, v: Option<&str>, w: &str) -> f64 {
        let ctx = |t: Option<&str>| t.map_or(START, |t| self.id(t));
        self.prob_ids(ctx(u), ctx(v), self.id(w))
    }

    /// Total natural-log probability of the tokens and the end marker.
    pub fn log_prob(&self, s: &Sentence) -> f64 {
        let (mut u, mut v) = (START, START);
        let mut total = 0.0;
        for w in self.ids_with_end(s) {
            total += self.prob_ids(u, v, w).ln();
            u = v;
            v = w;
        }
        total
    }

    /// Mean natural-log probability per predicted token (end marker included).
    pub fn score(&self, s: &Sentence) -> f64 {
        self.log_prob(s) / (s.len() + 1) as f64
    }
}
