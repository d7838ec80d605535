//! Golden metric fixtures and the conformance check against them.
//!
//! The fixture file is a JSON array of `{hyp, ref, chrf_pp, bleu}` records
//! with scores on the 0–100 scale.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{chrf_pp, sentence_bleu, BleuConfig, ChrfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRecord {
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub chrf_pp: f64,
    pub bleu: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot read fixture file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed fixture file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<FixtureRecord>, FixtureError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| FixtureError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| FixtureError::Parse { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub metric: &'static str,
    pub expected: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConformanceReport {
    pub checked: usize,
    pub max_chrf_error: f64,
    pub max_bleu_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Scores every record with the standard chrF++ and BLEU settings and
/// collects the ones that deviate by more than `tolerance`.
pub fn check(records: &[FixtureRecord], tolerance: f64) -> ConformanceReport {
    let chrf_cfg = ChrfConfig::default();
    let bleu_cfg = BleuConfig::default();
    let mut report = ConformanceReport { checked: records.len(), ..Default::default() };
    for (index, rec) in records.iter().enumerate() {
        let chrf = chrf_pp(&rec.hyp, &rec.reference, &chrf_cfg).expect("default config is valid").value();
        let bleu = sentence_bleu(&rec.hyp, &rec.reference, &bleu_cfg).expect("default config is valid").value();
        for (metric, expected, actual, worst) in [
            ("chrf_pp", rec.chrf_pp, chrf, &mut report.max_chrf_error),
            ("bleu", rec.bleu, bleu, &mut report.max_bleu_error),
        ] {
            let err = (expected - actual).abs();
            *worst = worst.max(err);
            if err > tolerance || !actual.is_finite() {
                report.mismatches.push(Mismatch { index, metric, expected, actual });
            }
        }
    }
    report
}
