use std::collections::BTreeSet;
use std::path::Path;

use super::{DataConfig, HarnessError};
use crate::synthdata::{read_corpus, Benchmark, Pair, Sentence, HIGH_RESOURCE_LANG, LOW_RESOURCE_LANG, SOURCE_LANG};

/// All corpora of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    /// Monolingual English sources for round-trip training.
    pub train_source: Vec<Sentence>,
    pub warm_pairs: Vec<Pair>,
    pub high_pairs: Vec<Pair>,
    pub dev: Vec<Pair>,
    pub test: Vec<Pair>,
    /// Target-language text for the fluency LM.
    pub lm_corpus: Vec<Sentence>,
}

impl ExperimentData {
    pub fn load(cfg: &DataConfig) -> Result<Self, HarnessError> {
        match &cfg.corpus_dir {
            Some(dir) => ExperimentData::read_dir(dir),
            None => Ok(ExperimentData::from_benchmark(Benchmark::build(&cfg.benchmark)?)),
        }
    }

    pub fn from_benchmark(b: Benchmark) -> Self {
        ExperimentData {
            train_source: b.split.train_source,
            warm_pairs: b.split.warmstart_pairs,
            high_pairs: b.high_pairs,
            dev: b.split.dev_pairs,
            test: b.split.test_pairs,
            lm_corpus: b.lm_corpus,
        }
    }

    /// Reads the file layout written by `Benchmark::write_dir`.
    pub fn read_dir(dir: &Path) -> Result<Self, HarnessError> {
        let (en, lo, hi) = (SOURCE_LANG, LOW_RESOURCE_LANG, HIGH_RESOURCE_LANG);
        let pairs = |name: &str, tgt: &str| -> Result<Vec<Pair>, HarnessError> {
            let src = read_corpus(&dir.join(format!("{name}.{en}")))?;
            let ref_path = dir.join(format!("{name}.{tgt}"));
            let refs = read_corpus(&ref_path)?;
            if src.len() != refs.len() {
                return Err(HarnessError::Artifact {
                    path: ref_path.display().to_string(),
                    message: format!("{} references for {} sources", refs.len(), src.len()),
                });
            }
            Ok(src.into_iter().zip(refs).map(|(source, target)| Pair { source, target }).collect())
        };
        Ok(ExperimentData {
            train_source: read_corpus(&dir.join(format!("train.{en}")))?,
            warm_pairs: pairs("warmstart", lo)?,
            high_pairs: pairs("high", hi)?,
            dev: pairs("dev", lo)?,
            test: pairs("test", lo)?,
            lm_corpus: read_corpus(&dir.join(format!("lm.{lo}")))?,
        })
    }

    /// Every token in every corpus, sorted.
    pub fn content_tokens(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        let mut add = |s: &Sentence| all.extend(s.tokens().iter().cloned());
        self.train_source.iter().for_each(&mut add);
        self.lm_corpus.iter().for_each(&mut add);
        for p in self.warm_pairs.iter().chain(&self.high_pairs).chain(&self.dev).chain(&self.test) {
            add(&p.source);
            add(&p.target);
        }
        all.into_iter().collect()
    }
}
