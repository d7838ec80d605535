use serde::{Deserialize, Serialize};

use super::grammar::generate_unique;
use super::{DataError, Sentence, ToyLanguage};

/// A parallel sentence pair with a held-out reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub source: Sentence,
    pub target: Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub warmstart: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 2000, warmstart: 200, dev: 200, test: 400 }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.warmstart + self.dev + self.test
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.train == 0 || self.warmstart == 0 || self.dev == 0 || self.test == 0 {
            return Err(DataError::InvalidSizes(format!("every split needs at least one sentence: {self:?}")));
        }
        Ok(())
    }
}

/// Training sources are monolingual; only the other splits carry references.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train_source: Vec<Sentence>,
    pub warmstart_pairs: Vec<Pair>,
    pub dev_pairs: Vec<Pair>,
    pub test_pairs: Vec<Pair>,
}

/// Draws attempted per requested sentence before giving up on uniqueness.
pub(crate) const DRAWS_PER_SENTENCE: usize = 50;

/// Distinct sentences, or a capacity error when the grammar cannot supply
/// them within `draws_per_sentence · n` attempts.
pub(crate) fn unique_pool(seed: u64, n: usize, draws_per_sentence: usize) -> Result<Vec<Sentence>, DataError> {
    let pool = generate_unique(seed, n, n.saturating_mul(draws_per_sentence).max(1));
    if pool.len() < n {
        return Err(DataError::CapacityExceeded { requested: n, available: pool.len() });
    }
    Ok(pool)
}

pub(crate) fn make_pairs(lang: &ToyLanguage, sources: &[Sentence]) -> Result<Vec<Pair>, DataError> {
    sources.iter().map(|s| Ok(Pair { source: s.clone(), target: lang.apply(s)? })).collect()
}

pub(crate) fn partition(lang: &ToyLanguage, pool: &[Sentence], sizes: &SplitSizes) -> Result<CorpusSplit, DataError> {
    let (train, rest) = pool.split_at(sizes.train);
    let (warm, rest) = rest.split_at(sizes.warmstart);
    let (dev, rest) = rest.split_at(sizes.dev);
    let test = &rest[..sizes.test];
    Ok(CorpusSplit {
        train_source: train.to_vec(),
        warmstart_pairs: make_pairs(lang, warm)?,
        dev_pairs: make_pairs(lang, dev)?,
        test_pairs: make_pairs(lang, test)?,
    })
}

/// Disjoint train/warm-start/dev/test splits; references come from `lang`.
pub fn build_split(lang: &ToyLanguage, sizes: SplitSizes, seed: u64) -> Result<CorpusSplit, DataError> {
    sizes.validate()?;
    let pool = unique_pool(seed, sizes.total(), DRAWS_PER_SENTENCE)?;
    partition(lang, &pool, &sizes)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::super::{english_vocabulary, LanguageKind};
    use super::*;

    fn lang() -> ToyLanguage {
        ToyLanguage::new(LanguageKind::Substitution, 1, &english_vocabulary(), &HashSet::new())
    }

    #[test]
    fn default_sizes_and_disjointness() {
        let split = build_split(&lang(), SplitSizes::default(), 17).unwrap();
        assert_eq!(split.train_source.len(), 2000);
        assert_eq!(split.warmstart_pairs.len(), 200);
        assert_eq!(split.dev_pairs.len(), 200);
        assert_eq!(split.test_pairs.len(), 400);
        let mut seen = HashSet::new();
        let all = split
            .train_source
            .iter()
            .chain(split.warmstart_pairs.iter().map(|p| &p.source))
            .chain(split.dev_pairs.iter().map(|p| &p.source))
            .chain(split.test_pairs.iter().map(|p| &p.source));
        for s in all {
            assert!(seen.insert(s.clone()), "duplicate source {s}");
        }
    }

    #[test]
    fn same_seed_same_split() {
        let sizes = SplitSizes { train: 30, warmstart: 5, dev: 5, test: 5 };
        assert_eq!(build_split(&lang(), sizes, 4).unwrap(), build_split(&lang(), sizes, 4).unwrap());
    }

    #[test]
    fn references_come_from_the_language() {
        let l = lang();
        let split = build_split(&l, SplitSizes { train: 3, warmstart: 3, dev: 3, test: 3 }, 2).unwrap();
        for p in &split.test_pairs {
            assert_eq!(l.invert(&p.target).unwrap(), p.source);
        }
    }

    #[test]
    fn oversized_and_empty_requests_are_rejected() {
        assert!(matches!(unique_pool(1, 5, 0), Err(DataError::CapacityExceeded { requested: 5, available: 1 })));
        let zero = SplitSizes { train: 0, ..SplitSizes::default() };
        assert!(matches!(build_split(&lang(), zero, 1), Err(DataError::InvalidSizes(_))));
    }
}
