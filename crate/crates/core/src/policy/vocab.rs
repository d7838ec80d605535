use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::synthdata::Sentence;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

pub fn lang_tag_token(code: &str) -> String {
    format!("<2{code}>")
}

/// Word-level vocabulary: four specials, one tag per language, then content.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    languages: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SpecialHeader {
    pad: String,
    bos: String,
    eos: String,
    unk: String,
}

/// On-disk form: special-token header, language codes and the id-ordered list.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct VocabFile {
    specials: SpecialHeader,
    languages: Vec<String>,
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new<I, S>(languages: &[&str], content: I) -> Result<Self, PolicyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(languages.iter().map(|l| lang_tag_token(l)));
        tokens.extend(content.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PolicyError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index, languages: languages.iter().map(|l| l.to_string()).collect() })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lang_tag(&self, code: &str) -> Result<usize, PolicyError> {
        self.languages
            .iter()
            .position(|l| l == code)
            .map(|i| SPECIALS.len() + i)
            .ok_or_else(|| PolicyError::UnknownLanguage(code.to_string()))
    }

    pub fn is_lang_tag(&self, id: usize) -> bool {
        (SPECIALS.len()..SPECIALS.len() + self.languages.len()).contains(&id)
    }

    pub fn is_content(&self, id: usize) -> bool {
        id >= SPECIALS.len() + self.languages.len() && id < self.tokens.len()
    }

    /// Ids the decoder may never emit: everything but content and `eos`.
    pub fn unemittable(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| i != EOS && !self.is_content(i)).collect()
    }

    /// Content ids; unknown words map to `unk`.
    pub fn encode(&self, s: &Sentence) -> Vec<usize> {
        s.tokens().iter().map(|t| self.id(t).filter(|&i| self.is_content(i)).unwrap_or(UNK)).collect()
    }

    /// Tokens up to the first `eos`; other non-content ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> Sentence {
        Sentence(
            ids.iter()
                .take_while(|&&i| i != EOS)
                .filter(|&&i| self.is_content(i))
                .map(|&i| self.tokens[i].clone())
                .collect(),
        )
    }

    pub(crate) fn to_file(&self) -> VocabFile {
        VocabFile {
            specials: SpecialHeader {
                pad: SPECIALS[PAD].into(),
                bos: SPECIALS[BOS].into(),
                eos: SPECIALS[EOS].into(),
                unk: SPECIALS[UNK].into(),
            },
            languages: self.languages.clone(),
            tokens: self.tokens.clone(),
        }
    }

    pub(crate) fn from_file(f: VocabFile) -> Result<Self, PolicyError> {
        let header = [&f.specials.pad, &f.specials.bos, &f.specials.eos, &f.specials.unk];
        if header.iter().zip(SPECIALS).any(|(a, b)| a.as_str() != b) {
            return Err(PolicyError::Vocab("unexpected special-token header".into()));
        }
        let n_fixed = SPECIALS.len() + f.languages.len();
        if f.tokens.len() < n_fixed {
            return Err(PolicyError::Vocab("token list shorter than its header".into()));
        }
        let langs: Vec<&str> = f.languages.iter().map(String::as_str).collect();
        let v = Vocab::new(&langs, f.tokens[n_fixed..].iter().cloned())?;
        if v.tokens != f.tokens {
            return Err(PolicyError::Vocab("token list disagrees with its header".into()));
        }
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        Vocab::from_file(serde_json::from_str(text).map_err(|e| PolicyError::Vocab(e.to_string()))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()).map_err(|e| PolicyError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Io(path.display().to_string(), e))?;
        Vocab::from_json(&text)
    }
}
