use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_forward, roundtrip_rollout, substream, CreditScope, LangPair, RewardSettings, RoundtripError};
use crate::grpo::{grpo_loss, AdamW, GrpoConfig, GrpoError, Lifecycle, StepRecord};
use crate::policy::{InferenceSession, PolicyParams, SamplingConfig, Vocab};
use crate::synthdata::{Pair, Sentence};

/// Everything that shapes a training run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub grpo: GrpoConfig,
    pub sampling: SamplingConfig,
    pub reward: RewardSettings,
    pub credit_scope: CreditScope,
    /// Steps between curve rows; 0 disables periodic evaluation.
    pub eval_every: usize,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Optional cap on the number of optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            grpo: GrpoConfig::default(),
            sampling: SamplingConfig::default(),
            reward: RewardSettings::default(),
            credit_scope: CreditScope::default(),
            eval_every: 100,
            checkpoint_every: 500,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), RoundtripError> {
        self.grpo.validate()?;
        self.sampling.validate()?;
        self.reward.validate()?;
        Ok(())
    }

    /// Number of optimizer steps a corpus of `n` sources yields.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.grpo.batch_size);
        let all = per_epoch * self.grpo.epochs;
        self.max_steps.map_or(all, |m| m.min(all))
    }
}

/// Training inputs. The source corpus is monolingual; only the dev pairs
/// used for curves carry references, and they never reach the update.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub sources: &'a [Sentence],
    pub dev: &'a [Pair],
    pub pair: LangPair,
}

/// One validation-curve row. Training aggregates cover the steps since
/// the previous row and are absent for the step-0 baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub forward_chrf: f64,
    pub backward_reward: Option<f64>,
    pub kl_mean: Option<f64>,
    pub loss: Option<f64>,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str = "step,forward_chrf,backward_reward,kl_mean,loss";

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{}",
            self.step,
            self.forward_chrf,
            opt(self.backward_reward),
            opt(self.kl_mean),
            opt(self.loss)
        )
    }
}

/// Observers of a run. Every method defaults to doing nothing.
pub trait TrainHooks {
    fn on_step(&mut self, _record: &StepRecord) -> Result<(), RoundtripError> {
        Ok(())
    }

    fn on_curve(&mut self, _row: &CurveRow) -> Result<(), RoundtripError> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: usize, _params: &PolicyParams, _opt: &AdamW) -> Result<(), RoundtripError> {
        Ok(())
    }

    /// Called with the last parameters that produced a finite update
    /// before a divergence error is returned.
    fn on_abort(&mut self, _step: usize, _last_good: &PolicyParams) -> Result<(), RoundtripError> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: usize,
    pub ref_syncs: usize,
    pub records: Vec<StepRecord>,
    pub curve: Vec<CurveRow>,
}

#[derive(Default)]
struct Window {
    reward: f64,
    kl: f64,
    loss: f64,
    n: usize,
}

impl Window {
    fn row(&mut self, step: usize, forward_chrf: f64) -> CurveRow {
        let n = self.n as f64;
        let mean = |x: f64| (self.n > 0).then(|| x / n);
        let row = CurveRow {
            step,
            forward_chrf,
            backward_reward: mean(self.reward),
            kl_mean: mean(self.kl),
            loss: mean(self.loss),
        };
        *self = Window::default();
        row
    }
}

/// Round-trip GRPO training. Each step rolls out a batch of sources with
/// the current policy, scores the reconstructions, takes one AdamW step
/// on the clipped surrogate and refreshes the reference every
/// `ref_update_every` steps.
pub fn train(
    params: &mut PolicyParams,
    vocab: &Vocab,
    data: TrainData<'_>,
    settings: &TrainSettings,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome, RoundtripError> {
    settings.validate()?;
    let grpo = &settings.grpo;
    let total = settings.total_steps(data.sources.len());
    let eval = |p: &PolicyParams| {
        evaluate_forward(data.dev, p, vocab, data.pair.target_tag, settings.sampling.max_len, &settings.reward.chrf)
    };
    let mut outcome = TrainOutcome { steps: 0, ref_syncs: 0, records: Vec::new(), curve: Vec::new() };
    let evaluating = settings.eval_every > 0 && !data.dev.is_empty();
    if evaluating {
        let row = Window::default().row(0, eval(params)?);
        hooks.on_curve(&row)?;
        outcome.curve.push(row);
    }
    if total == 0 {
        return Ok(outcome);
    }
    if data.sources.is_empty() {
        return Err(RoundtripError::Empty("no training sources".into()));
    }

    let mut data_rng = ChaCha8Rng::seed_from_u64(substream(settings.seed, "data"));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(substream(settings.seed, "sampling"));
    let mut opt = AdamW::new(grpo.learning_rate, grpo.adamw.clone(), params)?;
    let mut life = Lifecycle::new(params);
    let mut order: Vec<usize> = (0..data.sources.len()).collect();
    let mut cursor = order.len();
    let mut window = Window::default();

    for step in 1..=total {
        if cursor >= order.len() {
            order.shuffle(&mut data_rng);
            cursor = 0;
        }
        let batch = &order[cursor..(cursor + grpo.batch_size).min(order.len())];
        cursor += batch.len();

        life.sync_old(params);
        let mut groups = Vec::with_capacity(batch.len());
        let mut rewards = Vec::new();
        {
            let mut session = InferenceSession::new(&life.old, vocab);
            for &i in batch {
                let group = roundtrip_rollout(
                    &data.sources[i],
                    grpo.group_size,
                    &mut session,
                    vocab,
                    &settings.sampling,
                    data.pair,
                    &settings.reward,
                    grpo.advantage_std_floor,
                    &mut sample_rng,
                )?;
                if let Some(g) = group {
                    rewards.extend(g.rewards());
                    groups.push(g.to_train_group(data.pair, settings.credit_scope));
                }
            }
        }
        if groups.is_empty() {
            log::warn!("step {step}: every source in the batch was skipped");
            continue;
        }
        let abort = |hooks: &mut dyn TrainHooks, life: &Lifecycle, source: GrpoError| {
            hooks.on_abort(step, &life.old)?;
            Err(RoundtripError::Diverged { step, source })
        };
        let report = match grpo_loss(&groups, params, &life.reference, vocab, grpo) {
            Ok(r) => r,
            Err(e @ (GrpoError::NonFinite(_) | GrpoError::NanGradient { .. })) => return abort(hooks, &life, e),
            Err(e) => return Err(e.into()),
        };
        match opt.step(params) {
            Ok(()) => {}
            Err(e @ GrpoError::NanGradient { .. }) => return abort(hooks, &life, e),
            Err(e) => return Err(e.into()),
        }
        if life.maybe_sync_ref(step, grpo.ref_update_every, params) {
            log::debug!("step {step}: reference policy refreshed");
        }

        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let record = StepRecord {
            step,
            mean_reward,
            mean_abs_adv: report.mean_abs_adv,
            kl_mean: report.kl_mean,
            loss: report.loss,
        };
        hooks.on_step(&record)?;
        window.reward += mean_reward;
        window.kl += report.kl_mean;
        window.loss += report.loss;
        window.n += 1;
        outcome.records.push(record);
        outcome.steps = step;

        if evaluating && (step % settings.eval_every == 0 || step == total) {
            let row = window.row(step, eval(params)?);
            log::info!(
                "step {step}: dev chrF++ {:.2}, reward {:.4}",
                row.forward_chrf,
                row.backward_reward.unwrap_or(f64::NAN)
            );
            hooks.on_curve(&row)?;
            outcome.curve.push(row);
        }
        if settings.checkpoint_every > 0 && (step % settings.checkpoint_every == 0 || step == total) {
            hooks.on_checkpoint(step, params, &opt)?;
        }
    }
    outcome.ref_syncs = life.ref_syncs();
    Ok(outcome)
}
