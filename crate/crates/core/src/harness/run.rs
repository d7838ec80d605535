use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentData, HarnessError, RunConfig, SEED_STREAMS, VERSION};
use crate::grpo::{AdamW, StepLog, StepRecord};
use crate::policy::{PolicyCheckpoint, PolicyParams, Vocab};
use crate::roundtrip::{
    ablate_rewards, evaluate_fluency, evaluate_forward, parallel_examples, train, translate_greedy, warm_start,
    AblationMode, AblationRow, CurveRow, Directions, LangPair, RoundtripError, TrainData, TrainHooks,
};
use crate::synthdata::{
    train_trigram_lm, Pair, Sentence, TrigramLm, HIGH_RESOURCE_LANG, LOW_RESOURCE_LANG, SOURCE_LANG,
};

/// Data, vocabulary and warm-started policy shared by the runs of one
/// configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub data: ExperimentData,
    pub vocab: Vocab,
    pub pair: LangPair,
    pub warm: PolicyParams,
    pub warm_losses: Vec<f64>,
    pub lm: TrigramLm,
}

/// Forward quality and fluency of one policy on the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub forward_chrf: f64,
    pub fluency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub seed: u64,
    pub warm_start_final_loss: Option<f64>,
    pub before: ScoreBlock,
    pub after: ScoreBlock,
    pub steps: usize,
    pub ref_syncs: usize,
    /// Mean step reward over the first and last tenth of the steps.
    pub reward_first_decile: Option<f64>,
    pub reward_last_decile: Option<f64>,
    /// Least-squares slope of step reward against step.
    pub reward_slope: Option<f64>,
}

/// Builds the data, trains the fluency LM and runs the MLE warm start.
pub fn prepare(config: &RunConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let data = ExperimentData::load(&config.data)?;
    let vocab = Vocab::new(&[SOURCE_LANG, LOW_RESOURCE_LANG, HIGH_RESOURCE_LANG], data.content_tokens())?;
    let pair = LangPair::new(&vocab, SOURCE_LANG, LOW_RESOURCE_LANG)?;
    let model = config.model.model_config(vocab.len());
    let mut warm = PolicyParams::init(model, &mut ChaCha8Rng::seed_from_u64(config.stream_seed("init")))?;
    let high_dirs =
        if config.warm_start.high_resource_both_directions { Directions::Both } else { Directions::Reverse };
    let mut examples = parallel_examples(&data.high_pairs, &vocab, SOURCE_LANG, HIGH_RESOURCE_LANG, high_dirs)?;
    examples.extend(parallel_examples(&data.warm_pairs, &vocab, SOURCE_LANG, LOW_RESOURCE_LANG, Directions::Both)?);
    let warm_losses = warm_start(&mut warm, &vocab, &examples, &config.warm_start, config.stream_seed("warm_start"))?;
    if let Some(l) = warm_losses.last() {
        log::info!("warm start: {} steps, final loss {l:.4}", warm_losses.len());
    }
    let lm = train_trigram_lm(&data.lm_corpus, config.fluency_add_k)?;
    Ok(Prepared { config: config.clone(), data, vocab, pair, warm, warm_losses, lm })
}

impl Prepared {
    pub fn score(&self, params: &PolicyParams, pairs: &[Pair]) -> Result<ScoreBlock, HarnessError> {
        let max_len = self.config.sampling.max_len;
        let tag = self.pair.target_tag;
        let forward_chrf = evaluate_forward(pairs, params, &self.vocab, tag, max_len, &self.config.chrf)?;
        let sources: Vec<Sentence> = pairs.iter().map(|p| p.source.clone()).collect();
        let hyps = translate_greedy(&sources, params, &self.vocab, tag, max_len)?;
        let fluency = evaluate_fluency(&hyps, &self.lm)?;
        Ok(ScoreBlock { forward_chrf, fluency })
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData { sources: &self.data.train_source, dev: &self.data.dev, pair: self.pair }
    }

    fn checkpoint(&self, params: &PolicyParams, step: usize) -> PolicyCheckpoint {
        // The output directory is left out so identical runs in different
        // places produce identical bytes.
        let mut cfg = self.config.clone();
        cfg.output_dir = PathBuf::new();
        PolicyCheckpoint {
            params: params.snapshot(),
            vocab: self.vocab.clone(),
            extra: serde_json::json!({ "step": step, "config": cfg }),
        }
    }
}

/// Writes the artifacts of one run directory as training proceeds.
pub struct RunFiles<'a> {
    prepared: &'a Prepared,
    dir: PathBuf,
    curves: BufWriter<File>,
    steps: StepLog,
}

impl<'a> RunFiles<'a> {
    pub fn create(prepared: &'a Prepared, dir: &Path) -> Result<Self, HarnessError> {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck).map_err(|e| HarnessError::io(&ck, e))?;
        let curves_path = dir.join("curves.csv");
        let mut curves = BufWriter::new(File::create(&curves_path).map_err(|e| HarnessError::io(&curves_path, e))?);
        writeln!(curves, "{}", CurveRow::CSV_HEADER).map_err(|e| HarnessError::io(&curves_path, e))?;
        let steps_path = dir.join("steps.jsonl");
        if steps_path.exists() {
            std::fs::remove_file(&steps_path).map_err(|e| HarnessError::io(&steps_path, e))?;
        }
        let steps = StepLog::create(&steps_path)?;
        Ok(RunFiles { prepared, dir: dir.to_path_buf(), curves, steps })
    }

    fn save_policy(&self, name: &str, params: &PolicyParams, step: usize) -> Result<(), RoundtripError> {
        let path = self.dir.join("checkpoints").join(name);
        self.prepared.checkpoint(params, step).save(&path).map_err(RoundtripError::from)
    }
}

impl TrainHooks for RunFiles<'_> {
    fn on_step(&mut self, record: &StepRecord) -> Result<(), RoundtripError> {
        Ok(self.steps.append(record)?)
    }

    fn on_curve(&mut self, row: &CurveRow) -> Result<(), RoundtripError> {
        writeln!(self.curves, "{}", row.to_csv())?;
        Ok(self.curves.flush()?)
    }

    fn on_checkpoint(&mut self, step: usize, params: &PolicyParams, opt: &AdamW) -> Result<(), RoundtripError> {
        self.save_policy(&format!("step-{step:06}.ckpt"), params, step)?;
        let path = self.dir.join("checkpoints").join(format!("step-{step:06}.adamw"));
        opt.to_checkpoint().save(&path).map_err(|e| RoundtripError::Grpo(e.into()))
    }

    fn on_abort(&mut self, step: usize, last_good: &PolicyParams) -> Result<(), RoundtripError> {
        log::error!("non-finite update at step {step}; keeping the last good parameters");
        self.save_policy("last_good.ckpt", last_good, step.saturating_sub(1))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn write_run_header(config: &RunConfig, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join("config.toml"), &config.to_toml())?;
    write_file(&dir.join("version.txt"), &format!("{VERSION}\n"))?;
    let mut seeds = serde_json::Map::new();
    seeds.insert("master".into(), config.seed.into());
    for name in SEED_STREAMS {
        seeds.insert(name.into(), config.stream_seed(name).into());
    }
    write_file(&dir.join("seeds.json"), &serde_json::to_string_pretty(&seeds).expect("seeds serialize"))
}

fn deciles(records: &[StepRecord]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let n = records.len();
    if n < 2 {
        return (None, None, None);
    }
    let k = (n / 10).max(1);
    let mean = |r: &[StepRecord]| r.iter().map(|x| x.mean_reward).sum::<f64>() / r.len() as f64;
    let xs: Vec<f64> = records.iter().map(|r| r.step as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n as f64, ys.iter().sum::<f64>() / n as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (Some(mean(&records[..k])), Some(mean(&records[n - k..])), Some(sxy / sxx))
}

/// Trains from the prepared warm start, writing artifacts into `dir`.
pub fn train_prepared(prepared: &Prepared, dir: &Path) -> Result<(RunSummary, PolicyParams), HarnessError> {
    let config = &prepared.config;
    write_run_header(config, dir)?;
    let mut files = RunFiles::create(prepared, dir)?;
    files.save_policy("warm.ckpt", &prepared.warm, 0)?;
    let before = prepared.score(&prepared.warm, &prepared.data.test)?;
    log::info!("before: forward chrF++ {:.2}, fluency {:.4}", before.forward_chrf, before.fluency);

    let mut params = prepared.warm.clone();
    let outcome = train(&mut params, &prepared.vocab, prepared.train_data(), &config.train_settings(), &mut files)?;
    files.save_policy("final.ckpt", &params, outcome.steps)?;
    let after = prepared.score(&params, &prepared.data.test)?;
    log::info!("after: forward chrF++ {:.2}, fluency {:.4}", after.forward_chrf, after.fluency);

    let (first, last, slope) = deciles(&outcome.records);
    let summary = RunSummary {
        version: VERSION.to_string(),
        seed: config.seed,
        warm_start_final_loss: prepared.warm_losses.last().copied(),
        before,
        after,
        steps: outcome.steps,
        ref_syncs: outcome.ref_syncs,
        reward_first_decile: first,
        reward_last_decile: last,
        reward_slope: slope,
    };
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok((summary, params))
}

/// Full pipeline for `train`: prepare, train, evaluate.
pub fn run_train(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    let prepared = prepare(config)?;
    Ok(train_prepared(&prepared, &config.output_dir)?.0)
}

/// One warm start, then one training run per reward mode. Writes a
/// subdirectory per mode and `ablation.csv`.
pub fn run_ablate(config: &RunConfig) -> Result<Vec<AblationRow>, HarnessError> {
    let prepared = prepare(config)?;
    let dir = &config.output_dir;
    write_run_header(config, dir)?;
    let settings = config.train_settings();
    let mut failure = None;
    let mut hooks_for = |mode: AblationMode| -> Box<dyn TrainHooks + '_> {
        match RunFiles::create(&prepared, &dir.join(mode.name())) {
            Ok(f) => Box::new(f),
            Err(e) => {
                failure = Some(e);
                Box::new(crate::roundtrip::NoHooks)
            }
        }
    };
    let rows = ablate_rewards(
        &prepared.warm,
        &prepared.vocab,
        prepared.train_data(),
        &prepared.data.test,
        &settings,
        &AblationMode::ALL,
        &mut hooks_for,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut csv = String::from("mode,before,after,gain\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.mode.name(), r.before, r.after, r.gain));
    }
    write_file(&dir.join("ablation.csv"), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub step: usize,
    pub scores: ScoreBlock,
    /// Scores of the warm start stored beside the checkpoint, if any.
    pub baseline: Option<ScoreBlock>,
}

/// Scores a checkpoint on the `dev` or `test` split of the data it was
/// trained with.
pub fn run_eval(checkpoint: &Path, split: &str) -> Result<EvalReport, HarnessError> {
    let ck = PolicyCheckpoint::load(checkpoint)?;
    let bad = |message: String| HarnessError::Artifact { path: checkpoint.display().to_string(), message };
    let config: RunConfig = serde_json::from_value(ck.extra["config"].clone())
        .map_err(|e| bad(format!("checkpoint carries no usable run config: {e}")))?;
    let step = ck.extra["step"].as_u64().unwrap_or(0) as usize;
    let data = ExperimentData::load(&config.data)?;
    let pairs = match split {
        "dev" => &data.dev,
        "test" => &data.test,
        other => return Err(bad(format!("unknown split {other:?}; expected dev or test"))),
    };
    let lm = train_trigram_lm(&data.lm_corpus, config.fluency_add_k)?;
    let pair = LangPair::new(&ck.vocab, SOURCE_LANG, LOW_RESOURCE_LANG)?;
    let score = |params: &PolicyParams, vocab: &Vocab| -> Result<ScoreBlock, HarnessError> {
        let max_len = config.sampling.max_len;
        let forward_chrf = evaluate_forward(pairs, params, vocab, pair.target_tag, max_len, &config.chrf)?;
        let sources: Vec<Sentence> = pairs.iter().map(|p| p.source.clone()).collect();
        let hyps = translate_greedy(&sources, params, vocab, pair.target_tag, max_len)?;
        Ok(ScoreBlock { forward_chrf, fluency: evaluate_fluency(&hyps, &lm)? })
    };
    let scores = score(&ck.params, &ck.vocab)?;
    let warm_path = checkpoint.with_file_name("warm.ckpt");
    let baseline = if warm_path.exists() && warm_path != checkpoint {
        let warm = PolicyCheckpoint::load(&warm_path)?;
        Some(score(&warm.params, &warm.vocab)?)
    } else {
        None
    };
    Ok(EvalReport { split: split.to_string(), step, scores, baseline })
}

/// Reads and checks `curves.csv` of a run directory.
pub fn read_curves(run_dir: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let path = run_dir.join("curves.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let bad = |message: String| HarnessError::Artifact { path: path.display().to_string(), message };
    let mut lines = text.lines();
    if lines.next() != Some(CurveRow::CSV_HEADER) {
        return Err(bad("missing or unexpected header".into()));
    }
    let opt = |s: &str| -> Result<Option<f64>, HarnessError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
        }
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("line {} has {} fields", i + 2, f.len())));
            }
            Ok(CurveRow {
                step: f[0].parse().map_err(|_| bad(format!("bad step {:?}", f[0])))?,
                forward_chrf: opt(f[1])?.ok_or_else(|| bad("missing forward_chrf".into()))?,
                backward_reward: opt(f[2])?,
                kl_mean: opt(f[3])?,
                loss: opt(f[4])?,
            })
        })
        .collect()
}
