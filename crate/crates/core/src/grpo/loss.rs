use super::{k3, GrpoConfig, GrpoError, KlEstimator, KlWeighting};
use crate::policy::{output_mask, teacher_forced, Bound, InferenceSession, PolicyParams, Vocab};
use crate::tensor::{Tape, Var};

/// One generated sequence that enters the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub source: Vec<usize>,
    pub tag: usize,
    pub tokens: Vec<usize>,
    /// Unfiltered log-probabilities under the policy that generated it.
    pub old_logprobs: Vec<f64>,
}

/// The trajectories of one prompt, each possibly holding several scored
/// sequences that share its advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub members: Vec<Vec<ScoredSequence>>,
}

/// Reference-policy values for one scored sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum RefTerms {
    /// Log-probability of each generated token.
    Tokens(Vec<f64>),
    /// Emittable-column log-distribution at each position, row-major.
    Dists(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Mean per-token KL estimate over every scored token.
    pub kl_mean: f64,
    pub mean_abs_adv: f64,
    /// Fraction of tokens whose ratio left `[1−ε, 1+ε]`.
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// Columns the decoder can emit, as `(start, len)` runs.
fn emittable_runs(vocab: &Vocab) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let unemittable = vocab.unemittable();
    for id in (0..vocab.len()).filter(|i| !unemittable.contains(i)) {
        match runs.last_mut() {
            Some((s, l)) if *s + *l == id => *l += 1,
            _ => runs.push((id, 1)),
        }
    }
    runs
}

fn emittable_columns(t: &mut Tape, x: Var, runs: &[(usize, usize)]) -> Result<Var, GrpoError> {
    let parts = runs.iter().map(|&(s, l)| t.slice_cols(x, s, l)).collect::<Result<Vec<_>, _>>()?;
    Ok(if parts.len() == 1 { parts[0] } else { t.concat_cols(&parts)? })
}

/// Reference terms for every scored sequence, in group/member order.
pub fn reference_terms(
    groups: &[TrainGroup],
    reference: &PolicyParams,
    vocab: &Vocab,
    estimator: KlEstimator,
) -> Result<Vec<RefTerms>, GrpoError> {
    let mut session = InferenceSession::new(reference, vocab);
    let runs = emittable_runs(vocab);
    let mut out = Vec::new();
    for g in groups {
        for seq in g.members.iter().flatten() {
            out.push(match estimator {
                KlEstimator::K3 => RefTerms::Tokens(session.sequence_logprobs(&seq.source, seq.tag, &seq.tokens)?),
                KlEstimator::Exact => {
                    let rows = session.sequence_log_dists(&seq.source, seq.tag, &seq.tokens)?;
                    let mut flat = Vec::new();
                    for row in rows {
                        for &(s, l) in &runs {
                            flat.extend_from_slice(&row[s..s + l]);
                        }
                    }
                    RefTerms::Dists(flat)
                }
            });
        }
    }
    Ok(out)
}

/// Records the negated objective on `tape`:
///
/// `−(1/B) Σ_groups (1/G) Σ_i Σ_o (1/|o|) Σ_t [min(r·A_i, clip(r)·A_i) − β·kl_t]`
///
/// with `r = exp(log π_θ − log π_old)`. Returns the loss and its report.
pub fn build_grpo_loss(
    tape: &mut Tape,
    bound: &Bound,
    params: &PolicyParams,
    vocab: &Vocab,
    groups: &[TrainGroup],
    refs: &[RefTerms],
    cfg: &GrpoConfig,
) -> Result<(Var, LossReport), GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let model = &params.config;
    let mask = output_mask(tape, model.vocab_size, &vocab.unemittable());
    let runs = emittable_runs(vocab);
    let eps = cfg.clip_epsilon;
    let batch = groups.len() as f64;

    let mut refs_iter = refs.iter();
    let mut terms: Vec<Var> = Vec::new();
    let (mut kl_sum, mut tokens, mut clipped, mut abs_adv, mut n_adv) = (0.0, 0usize, 0usize, 0.0, 0usize);
    for g in groups {
        if g.advantages.len() != g.members.len() {
            return Err(GrpoError::LengthMismatch(g.advantages.len(), g.members.len()));
        }
        let weight = 1.0 / (batch * g.members.len() as f64);
        for (&adv, seqs) in g.advantages.iter().zip(&g.members) {
            abs_adv += adv.abs();
            n_adv += 1;
            for seq in seqs {
                let len = seq.tokens.len();
                if seq.old_logprobs.len() != len {
                    return Err(GrpoError::LengthMismatch(seq.old_logprobs.len(), len));
                }
                let reference = refs_iter.next().ok_or(GrpoError::LengthMismatch(refs.len(), tokens + 1))?;
                let tf = teacher_forced(tape, bound, model, &seq.source, seq.tag, &seq.tokens, mask)?;
                let lp = tf.token_log_probs;

                let old = tape.constant_from(vec![len], seq.old_logprobs.clone());
                let diff = tape.sub(lp, old)?;
                let ratio = tape.exp(diff);
                let unclipped = tape.scale(ratio, adv);
                let bounded = tape.clip_value(ratio, 1.0 - eps, 1.0 + eps);
                let bounded = tape.scale(bounded, adv);
                let surrogate = tape.minimum(unclipped, bounded)?;
                clipped += tape.value(ratio).iter().filter(|r| (**r - 1.0).abs() > eps).count();

                let kl = match (cfg.kl_estimator, reference) {
                    (KlEstimator::K3, RefTerms::Tokens(r)) => {
                        if r.len() != len {
                            return Err(GrpoError::LengthMismatch(r.len(), len));
                        }
                        let rv = tape.constant_from(vec![len], r.clone());
                        let d = tape.sub(rv, lp)?;
                        let e = tape.exp(d);
                        let k = tape.sub(e, d)?;
                        let k = tape.add_scalar(k, -1.0);
                        for (&c, &rr) in tape.value(lp).iter().zip(r) {
                            kl_sum += k3(c, rr);
                        }
                        k
                    }
                    (KlEstimator::Exact, RefTerms::Dists(r)) => {
                        let cur = emittable_columns(tape, tf.log_probs, &runs)?;
                        let width = tape.shape(cur)[1];
                        if r.len() != len * width {
                            return Err(GrpoError::LengthMismatch(r.len(), len * width));
                        }
                        let rv = tape.constant_from(vec![len, width], r.clone());
                        let p = tape.exp(cur);
                        let d = tape.sub(cur, rv)?;
                        let pd = tape.mul(p, d)?;
                        let k = tape.sum_rows(pd)?;
                        kl_sum += tape.value(k).iter().sum::<f64>();
                        k
                    }
                    _ => return Err(GrpoError::Config("reference terms do not match the KL estimator".into())),
                };
                tokens += len;

                let inv_len = 1.0 / len as f64;
                let term = match cfg.kl_weighting {
                    KlWeighting::PerToken => {
                        let pen = tape.scale(kl, cfg.kl_beta);
                        let per_token = tape.sub(surrogate, pen)?;
                        let s = tape.sum(per_token);
                        tape.scale(s, inv_len)
                    }
                    KlWeighting::PerSequence => {
                        let s = tape.sum(surrogate);
                        let s = tape.scale(s, inv_len);
                        let k = tape.sum(kl);
                        let k = tape.scale(k, cfg.kl_beta);
                        tape.sub(s, k)?
                    }
                };
                terms.push(tape.scale(term, weight));
            }
        }
    }
    if refs_iter.next().is_some() {
        return Err(GrpoError::LengthMismatch(refs.len(), terms.len()));
    }
    let objective = match terms.split_first() {
        Some((&first, rest)) => rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))?,
        None => tape.constant_from(Vec::new(), vec![0.0]),
    };
    let loss = tape.scale(objective, -1.0);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(GrpoError::NonFinite(format!("loss {value}")));
    }
    let report = LossReport {
        loss: value,
        kl_mean: if tokens > 0 { kl_sum / tokens as f64 } else { 0.0 },
        mean_abs_adv: if n_adv > 0 { abs_adv / n_adv as f64 } else { 0.0 },
        clip_fraction: if tokens > 0 { clipped as f64 / tokens as f64 } else { 0.0 },
        tokens,
    };
    Ok((loss, report))
}

/// Evaluates the loss and adds its gradient into `params`' gradient fields.
pub fn grpo_loss(
    groups: &[TrainGroup],
    params: &mut PolicyParams,
    reference: &PolicyParams,
    vocab: &Vocab,
    cfg: &GrpoConfig,
) -> Result<LossReport, GrpoError> {
    let refs = reference_terms(groups, reference, vocab, cfg.kl_estimator)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let (loss, report) = build_grpo_loss(&mut tape, &bound, params, vocab, groups, &refs, cfg)?;
    tape.backward(loss)?;
    params.accumulate_grads(&tape, &bound)?;
    Ok(report)
}
