use std::collections::HashMap;

use super::{is_split_space, split_words};

/// Multiset of n-grams keyed by their surface string.
pub type NgramCounts = HashMap<String, usize>;

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(c)
}

/// Character n-grams of `text` with every whitespace character removed.
pub fn char_ngrams(text: &str, n: usize) -> NgramCounts {
    assert!(n >= 1, "n-gram order must be positive");
    let chars: Vec<char> = text.chars().filter(|&c| !is_split_space(c)).collect();
    let mut counts = NgramCounts::new();
    if chars.len() < n {
        return counts;
    }
    for window in chars.windows(n) {
        *counts.entry(window.iter().collect()).or_insert(0) += 1;
    }
    counts
}

/// Word tokens used by chrF++: whitespace split, then a single leading or
/// trailing punctuation mark is peeled off each multi-character word.
pub fn chrf_words(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in split_words(text) {
        let mut chars = word.chars();
        let first = chars.next().expect("split_words yields non-empty words");
        let Some(last) = chars.next_back() else {
            tokens.push(word.to_string());
            continue;
        };
        if is_punct(last) {
            let cut = word.len() - last.len_utf8();
            tokens.push(word[..cut].to_string());
            tokens.push(last.to_string());
        } else if is_punct(first) {
            let cut = first.len_utf8();
            tokens.push(first.to_string());
            tokens.push(word[cut..].to_string());
        } else {
            tokens.push(word.to_string());
        }
    }
    tokens
}

pub(crate) fn token_ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> NgramCounts {
    assert!(n >= 1, "n-gram order must be positive");
    let mut counts = NgramCounts::new();
    if tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key = window.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Word n-grams over the chrF++ tokenization of `text`.
pub fn word_ngrams(text: &str, n: usize) -> NgramCounts {
    token_ngrams(&chrf_words(text), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, usize)]) -> NgramCounts {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn char_ngrams_drop_whitespace() {
        assert_eq!(char_ngrams("ab cd", 2), counts(&[("ab", 1), ("bc", 1), ("cd", 1)]));
        assert_eq!(char_ngrams("aaa", 1), counts(&[("a", 3)]));
        assert!(char_ngrams("", 3).is_empty());
        assert!(char_ngrams("ab", 3).is_empty());
    }

    #[test]
    fn word_ngrams_split_punctuation() {
        assert_eq!(word_ngrams("Hello, world", 1), counts(&[("Hello", 1), (",", 1), ("world", 1)]));
        assert_eq!(word_ngrams("a b c", 2), counts(&[("a b", 1), ("b c", 1)]));
        assert!(word_ngrams("a", 2).is_empty());
    }

    #[test]
    fn only_one_edge_mark_is_peeled() {
        assert_eq!(chrf_words("(hi)"), vec!["(hi", ")"]);
        assert_eq!(chrf_words("\"quoted"), vec!["\"", "quoted"]);
        assert_eq!(chrf_words("..."), vec!["..", "."]);
        assert_eq!(chrf_words("a-b"), vec!["a-b"]);
        assert_eq!(chrf_words("é!"), vec!["é", "!"]);
    }
}
