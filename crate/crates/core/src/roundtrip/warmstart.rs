use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RoundtripError;
use crate::grpo::{AdamW, AdamWConfig, GrpoError};
use crate::policy::{output_mask, teacher_forced, PolicyParams, Vocab, EOS};
use crate::synthdata::Pair;
use crate::tensor::Tape;

/// Supervised pretraining schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStartConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Also train `source → high-resource` on the high-resource pairs.
    /// Off by default: a decoder fluent in the high-resource language lets
    /// the round trip route through it instead of the target language.
    pub high_resource_both_directions: bool,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig { steps: 1500, batch_size: 16, learning_rate: 3e-3, high_resource_both_directions: false }
    }
}

impl WarmStartConfig {
    pub fn validate(&self) -> Result<(), RoundtripError> {
        if self.batch_size == 0 {
            return Err(RoundtripError::Config("warm_start.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RoundtripError::Config("warm_start.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One supervised example; `target` ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<usize>,
    pub tag: usize,
    pub target: Vec<usize>,
}

/// Which translation directions a parallel corpus contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    Forward,
    Reverse,
    Both,
}

/// Encodes parallel pairs as supervised examples in the chosen directions.
pub fn parallel_examples(
    pairs: &[Pair],
    vocab: &Vocab,
    source_lang: &str,
    target_lang: &str,
    directions: Directions,
) -> Result<Vec<Example>, RoundtripError> {
    let (src_tag, tgt_tag) = (vocab.lang_tag(source_lang)?, vocab.lang_tag(target_lang)?);
    let with_eos = |mut v: Vec<usize>| {
        v.push(EOS);
        v
    };
    let mut out = Vec::new();
    for p in pairs {
        let (s, t) = (vocab.encode(&p.source), vocab.encode(&p.target));
        if directions != Directions::Reverse {
            out.push(Example { source: s.clone(), tag: tgt_tag, target: with_eos(t.clone()) });
        }
        if directions != Directions::Forward {
            out.push(Example { source: t, tag: src_tag, target: with_eos(s) });
        }
    }
    Ok(out)
}

/// Maximum-likelihood training on `examples`. Each step averages the
/// per-token negative log-likelihood of a shuffled minibatch; the data is
/// reshuffled every pass. Returns the loss of each step.
pub fn warm_start(
    params: &mut PolicyParams,
    vocab: &Vocab,
    examples: &[Example],
    cfg: &WarmStartConfig,
    seed: u64,
) -> Result<Vec<f64>, RoundtripError> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if examples.is_empty() {
        return Err(RoundtripError::Empty("no warm-start examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(cfg.learning_rate, AdamWConfig::default(), params)?;
    let unemittable = vocab.unemittable();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let mask = output_mask(&mut tape, params.config.vocab_size, &unemittable);
        let mut total = None;
        let b = cfg.batch_size.min(examples.len());
        for _ in 0..b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            let tf = teacher_forced(&mut tape, &bound, &params.config, &ex.source, ex.tag, &ex.target, mask)?;
            let nll = tape.mean(tf.token_log_probs);
            total = Some(match total {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
        }
        let total = total.expect("batch is non-empty");
        let loss = tape.scale(total, -1.0 / b as f64);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(RoundtripError::Diverged { step, source: GrpoError::NonFinite(format!("MLE loss {value}")) });
        }
        tape.backward(loss)?;
        params.accumulate_grads(&tape, &bound)?;
        opt.step(params).map_err(|source| RoundtripError::Diverged { step, source })?;
        losses.push(value);
    }
    Ok(losses)
}
