//! Seeded synthetic "low-resource" translation benchmarks.
//!
//! An English-like template corpus is mapped through invertible
//! token-level transforms ([`ToyLanguage`]), so every sentence has an exact
//! reference translation for evaluation.

mod grammar;
mod language;
mod lm;
mod split;

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grammar::{english_vocabulary, generate_corpus, Sentence};
pub use language::{LanguageKind, ToyLanguage};
pub use lm::{train_trigram_lm, TrigramLm, END_TOKEN, UNK_TOKEN};
pub use split::{build_split, CorpusSplit, Pair, SplitSizes};

/// Language codes used by the benchmark.
pub const SOURCE_LANG: &str = "en";
pub const LOW_RESOURCE_LANG: &str = "lrl";
pub const HIGH_RESOURCE_LANG: &str = "hrl";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("token {0:?} is outside the language's vocabulary")]
    OutOfVocabulary(String),
    #[error("invalid split sizes: {0}")]
    InvalidSizes(String),
    #[error("grammar produced only {available} distinct sentences, {requested} requested")]
    CapacityExceeded { requested: usize, available: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("add-k smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("noise probability must lie in [0, 1], got {0}")]
    InvalidNoise(f64),
    #[error("corpus i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Everything needed to regenerate a benchmark bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub grammar_seed: u64,
    pub language: LanguageKind,
    pub language_seed: u64,
    pub high_resource_language: LanguageKind,
    pub high_resource_seed: u64,
    pub sizes: SplitSizes,
    /// Parallel pairs of the high-resource language used only for warm start.
    pub high_resource_pairs: usize,
    /// Target-side monolingual sentences for the fluency LM.
    pub lm_sentences: usize,
    /// Per-token typo probability applied to warm-start targets.
    pub noise: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            grammar_seed: 7,
            language: LanguageKind::Substitution,
            language_seed: 11,
            high_resource_language: LanguageKind::Substitution,
            high_resource_seed: 23,
            sizes: SplitSizes::default(),
            high_resource_pairs: 2000,
            lm_sentences: 2000,
            noise: 0.0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        self.sizes.validate()?;
        if self.lm_sentences == 0 {
            return Err(DataError::InvalidSizes("lm_sentences must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(DataError::InvalidNoise(self.noise));
        }
        Ok(())
    }
}

/// A generated benchmark. All source sentences across the split, the
/// high-resource pairs and the LM corpus are pairwise distinct.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub low: ToyLanguage,
    pub high: ToyLanguage,
    pub split: CorpusSplit,
    pub high_pairs: Vec<Pair>,
    pub lm_corpus: Vec<Sentence>,
}

impl Benchmark {
    pub fn build(spec: &BenchmarkSpec) -> Result<Self, DataError> {
        spec.validate()?;
        let english = english_vocabulary();
        let low = ToyLanguage::new(spec.language, spec.language_seed, &english, &HashSet::new());
        let avoid: HashSet<String> = low.vocabulary().into_iter().collect();
        let high = ToyLanguage::new(spec.high_resource_language, spec.high_resource_seed, &english, &avoid);

        let split_total = spec.sizes.total();
        let total = split_total + spec.high_resource_pairs + spec.lm_sentences;
        let pool = split::unique_pool(spec.grammar_seed, total, split::DRAWS_PER_SENTENCE)?;
        let mut split = split::partition(&low, &pool[..split_total], &spec.sizes)?;
        if spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.grammar_seed ^ 0x006e_6f69_7365);
            for p in &mut split.warmstart_pairs {
                p.target = low.apply_noisy(&p.source, spec.noise, &mut rng)?;
            }
        }
        let hi_end = split_total + spec.high_resource_pairs;
        let high_pairs = split::make_pairs(&high, &pool[split_total..hi_end])?;
        let lm_corpus = pool[hi_end..].iter().map(|s| low.apply(s)).collect::<Result<_, _>>()?;
        Ok(Benchmark { spec: spec.clone(), low, high, split, high_pairs, lm_corpus })
    }

    /// Every token any benchmark language can emit, sorted.
    pub fn content_tokens(&self) -> Vec<String> {
        let mut all = english_vocabulary();
        all.extend(self.low.vocabulary());
        all.extend(self.high.vocabulary());
        all.sort();
        all.dedup();
        all
    }

    /// Writes the benchmark as one-sentence-per-line text files.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let (en, lo, hi) = (SOURCE_LANG, LOW_RESOURCE_LANG, HIGH_RESOURCE_LANG);
        write_corpus(&dir.join(format!("train.{en}")), &self.split.train_source)?;
        for (name, pairs) in [
            ("warmstart", &self.split.warmstart_pairs),
            ("dev", &self.split.dev_pairs),
            ("test", &self.split.test_pairs),
        ] {
            write_pairs(dir, name, en, lo, pairs)?;
        }
        write_pairs(dir, "high", en, hi, &self.high_pairs)?;
        write_corpus(&dir.join(format!("lm.{lo}")), &self.lm_corpus)
    }
}

fn write_pairs(dir: &Path, name: &str, src: &str, tgt: &str, pairs: &[Pair]) -> Result<(), DataError> {
    let sources: Vec<Sentence> = pairs.iter().map(|p| p.source.clone()).collect();
    let targets: Vec<Sentence> = pairs.iter().map(|p| p.target.clone()).collect();
    write_corpus(&dir.join(format!("{name}.{src}")), &sources)?;
    write_corpus(&dir.join(format!("{name}.{tgt}")), &targets)
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Reads UTF-8 text, one whitespace-tokenized sentence per line. Blank lines
/// become empty sentences so line numbers stay aligned.
pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>, DataError> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    std::io::BufReader::new(f).lines().map(|l| l.map(|l| Sentence::parse(&l)).map_err(|e| io_err(path, e))).collect()
}

pub fn write_corpus(path: &Path, sentences: &[Sentence]) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    for s in sentences {
        writeln!(w, "{s}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> BenchmarkSpec {
        BenchmarkSpec {
            sizes: SplitSizes { train: 40, warmstart: 10, dev: 10, test: 10 },
            high_resource_pairs: 20,
            lm_sentences: 20,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn benchmark_is_disjoint_and_languages_do_not_share_words() {
        let b = Benchmark::build(&small_spec()).unwrap();
        let mut seen = HashSet::new();
        let lm_sources: Vec<Sentence> = b.lm_corpus.iter().map(|s| b.low.invert(s).unwrap()).collect();
        let all = b
            .split
            .train_source
            .iter()
            .chain(b.split.warmstart_pairs.iter().map(|p| &p.source))
            .chain(b.split.dev_pairs.iter().map(|p| &p.source))
            .chain(b.split.test_pairs.iter().map(|p| &p.source))
            .chain(b.high_pairs.iter().map(|p| &p.source))
            .chain(lm_sources.iter());
        for s in all {
            assert!(seen.insert(s.clone()), "duplicate {s}");
        }
        let low: HashSet<String> = b.low.vocabulary().into_iter().collect();
        assert!(b.high.vocabulary().iter().all(|w| w == "." || !low.contains(w)));
    }

    #[test]
    fn split_prefix_matches_build_split() {
        let spec = small_spec();
        let b = Benchmark::build(&spec).unwrap();
        assert_eq!(b.split, build_split(&b.low, spec.sizes, spec.grammar_seed).unwrap());
    }

    #[test]
    fn noise_only_touches_warmstart_targets() {
        let spec = BenchmarkSpec { noise: 0.5, ..small_spec() };
        let noisy = Benchmark::build(&spec).unwrap();
        let clean = Benchmark::build(&small_spec()).unwrap();
        assert_ne!(noisy.split.warmstart_pairs, clean.split.warmstart_pairs);
        assert_eq!(noisy.split.test_pairs, clean.split.test_pairs);
        assert!(Benchmark::build(&BenchmarkSpec { noise: 1.5, ..small_spec() }).is_err());
    }

    #[test]
    fn corpus_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = Benchmark::build(&small_spec()).unwrap();
        b.write_dir(dir.path()).unwrap();
        let back = read_corpus(&dir.path().join("test.lrl")).unwrap();
        let expected: Vec<Sentence> = b.split.test_pairs.iter().map(|p| p.target.clone()).collect();
        assert_eq!(back, expected);
        assert!(read_corpus(&dir.path().join("missing.txt")).is_err());
    }
}
