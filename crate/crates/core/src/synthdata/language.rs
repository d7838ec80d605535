use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageKind {
    /// Bijective word cipher.
    Substitution,
    /// Cipher followed by reversing the token order.
    Reversal,
    /// Cipher followed by a positional suffix on every word.
    Affix,
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

/// A seeded, invertible token-level transform of the English-like corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLanguage {
    pub kind: LanguageKind,
    pub seed: u64,
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
    suffixes: [String; 2],
}

fn is_punct(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_punctuation())
}

impl ToyLanguage {
    /// Builds a cipher over `source_vocab`. Punctuation maps to itself; no
    /// produced word collides with `avoid` or with the source vocabulary.
    pub fn new(kind: LanguageKind, seed: u64, source_vocab: &[String], avoid: &HashSet<String>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used: HashSet<String> = source_vocab.iter().cloned().collect();
        used.extend(avoid.iter().cloned());
        let suffixes = [syllable(&mut rng), syllable(&mut rng)];
        let mut forward = BTreeMap::new();
        let mut backward = BTreeMap::new();
        let mut words: Vec<&String> = source_vocab.iter().collect();
        words.sort();
        for w in words {
            let target = if is_punct(w) {
                w.clone()
            } else {
                loop {
                    let syllables = rng.gen_range(2..=3);
                    let candidate: String = (0..syllables).map(|_| syllable(&mut rng)).collect();
                    let forms_free = match kind {
                        LanguageKind::Affix => suffixes.iter().all(|s| !used.contains(&format!("{candidate}{s}"))),
                        _ => true,
                    };
                    if !used.contains(&candidate) && forms_free {
                        break candidate;
                    }
                }
            };
            used.insert(target.clone());
            if kind == LanguageKind::Affix {
                for s in &suffixes {
                    used.insert(format!("{target}{s}"));
                }
            }
            backward.insert(target.clone(), w.clone());
            forward.insert(w.clone(), target);
        }
        ToyLanguage { kind, seed, forward, backward, suffixes }
    }

    fn encode_word(&self, word: &str, position: usize) -> Result<String, DataError> {
        let base = self.forward.get(word).ok_or_else(|| DataError::OutOfVocabulary(word.to_string()))?;
        Ok(match self.kind {
            LanguageKind::Affix if !is_punct(base) => format!("{base}{}", self.suffixes[position % 2]),
            _ => base.clone(),
        })
    }

    fn decode_word(&self, token: &str, position: usize) -> Result<String, DataError> {
        let oov = || DataError::OutOfVocabulary(token.to_string());
        let base = match self.kind {
            LanguageKind::Affix if !is_punct(token) => {
                token.strip_suffix(self.suffixes[position % 2].as_str()).ok_or_else(oov)?
            }
            _ => token,
        };
        self.backward.get(base).cloned().ok_or_else(oov)
    }

    /// English → toy language.
    pub fn apply(&self, sentence: &Sentence) -> Result<Sentence, DataError> {
        let mut out =
            sentence.tokens().iter().enumerate().map(|(i, w)| self.encode_word(w, i)).collect::<Result<Vec<_>, _>>()?;
        if self.kind == LanguageKind::Reversal {
            out.reverse();
        }
        Ok(Sentence(out))
    }

    /// Toy language → English; exact inverse of [`ToyLanguage::apply`].
    pub fn invert(&self, sentence: &Sentence) -> Result<Sentence, DataError> {
        let mut tokens = sentence.tokens().to_vec();
        if self.kind == LanguageKind::Reversal {
            tokens.reverse();
        }
        let out = tokens.iter().enumerate().map(|(i, t)| self.decode_word(t, i)).collect::<Result<Vec<_>, _>>()?;
        Ok(Sentence(out))
    }

    /// [`ToyLanguage::apply`] with each content word replaced, with
    /// probability `typo_prob`, by a random word of the same language.
    pub fn apply_noisy(&self, sentence: &Sentence, typo_prob: f64, rng: &mut impl Rng) -> Result<Sentence, DataError> {
        let clean = self.apply(sentence)?;
        if typo_prob <= 0.0 {
            return Ok(clean);
        }
        let words: Vec<&String> = self.backward.keys().filter(|w| !is_punct(w)).collect();
        let out = clean
            .0
            .into_iter()
            .map(|t| {
                if !is_punct(&t) && rng.gen_bool(typo_prob.min(1.0)) {
                    (*words.choose(rng).expect("cipher is non-empty")).clone()
                } else {
                    t
                }
            })
            .collect();
        Ok(Sentence(out))
    }

    /// Every surface token this language can produce, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut out: Vec<String> = match self.kind {
            LanguageKind::Affix => self
                .backward
                .keys()
                .flat_map(|w| {
                    if is_punct(w) {
                        vec![w.clone()]
                    } else {
                        self.suffixes.iter().map(|s| format!("{w}{s}")).collect()
                    }
                })
                .collect(),
            _ => self.backward.keys().cloned().collect(),
        };
        out.sort();
        out.dedup();
        out
    }
}

fn syllable(rng: &mut impl Rng) -> String {
    let c = *CONSONANTS.choose(rng).expect("non-empty");
    let v = *VOWELS.choose(rng).expect("non-empty");
    format!("{c}{v}")
}

#[cfg(test)]
mod tests {
    use super::super::grammar::{english_vocabulary, generate_corpus};
    use super::*;
    use proptest::prelude::*;

    fn lang(kind: LanguageKind) -> ToyLanguage {
        ToyLanguage::new(kind, 42, &english_vocabulary(), &HashSet::new())
    }

    #[test]
    fn round_trip_identity_on_a_thousand_sentences() {
        for kind in [LanguageKind::Substitution, LanguageKind::Reversal, LanguageKind::Affix] {
            let l = lang(kind);
            for s in generate_corpus(9, 1000) {
                assert_eq!(l.invert(&l.apply(&s).unwrap()).unwrap(), s);
            }
        }
    }

    #[test]
    fn substitution_preserves_length_and_reversal_reverses() {
        let s = Sentence::parse("the old farmer saw a dog .");
        let sub = lang(LanguageKind::Substitution);
        let out = sub.apply(&s).unwrap();
        assert_eq!(out.len(), s.len());
        assert_eq!(out.tokens().last().unwrap(), ".");

        let rev = lang(LanguageKind::Reversal);
        let r = rev.apply(&s).unwrap();
        let mut expected = sub.apply(&s).unwrap().0;
        expected.reverse();
        // Same seed means the same cipher table.
        assert_eq!(r.0, expected);
    }

    #[test]
    fn out_of_vocabulary_is_rejected() {
        let l = lang(LanguageKind::Substitution);
        assert!(matches!(l.apply(&Sentence::parse("zebra")), Err(DataError::OutOfVocabulary(_))));
        assert!(l.invert(&Sentence::parse("farmer")).is_err());
        let a = lang(LanguageKind::Affix);
        let w = a.apply(&Sentence::parse("dog")).unwrap();
        // The suffix is tied to the position.
        assert!(a.invert(&Sentence(vec![".".into(), w.0[0].clone()])).is_err());
    }

    #[test]
    fn avoided_words_are_not_produced() {
        let first = lang(LanguageKind::Substitution);
        let avoid: HashSet<String> = first.vocabulary().into_iter().filter(|w| w != ".").collect();
        let second = ToyLanguage::new(LanguageKind::Substitution, 42, &english_vocabulary(), &avoid);
        assert!(second.vocabulary().iter().all(|w| w == "." || !avoid.contains(w)));
    }

    proptest! {
        #[test]
        fn every_kind_is_a_bijection(seed in 0u64..1000, corpus_seed in 0u64..1000) {
            for kind in [LanguageKind::Substitution, LanguageKind::Reversal, LanguageKind::Affix] {
                let l = ToyLanguage::new(kind, seed, &english_vocabulary(), &HashSet::new());
                for s in generate_corpus(corpus_seed, 5) {
                    prop_assert_eq!(l.invert(&l.apply(&s).unwrap()).unwrap(), s);
                }
            }
        }
    }
}
