use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GrpoError;

/// Metrics of one optimizer step, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_adv: f64,
    pub kl_mean: f64,
    pub loss: f64,
}

/// Append-only JSONL step log.
#[derive(Debug)]
pub struct StepLog {
    path: PathBuf,
    file: File,
}

impl StepLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, GrpoError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(StepLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<(), GrpoError> {
        let line = serde_json::to_string(record).map_err(|e| GrpoError::NonFinite(format!("step record: {e}")))?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<StepRecord>, GrpoError> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec =
                serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            out.push(rec);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.jsonl");
        let recs: Vec<StepRecord> = (0..3)
            .map(|i| StepRecord { step: i, mean_reward: 0.5, mean_abs_adv: 0.8, kl_mean: 1e-3 * i as f64, loss: -0.1 })
            .collect();
        let mut log = StepLog::create(&path).unwrap();
        for r in &recs {
            log.append(r).unwrap();
        }
        assert_eq!(StepLog::read(&path).unwrap(), recs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("{\"step\":0,\"mean_reward\":0.5"));
    }
}
