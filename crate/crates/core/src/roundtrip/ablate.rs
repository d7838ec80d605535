use serde::{Deserialize, Serialize};

use super::{evaluate_forward, train, RoundtripError, TrainData, TrainHooks, TrainSettings};
use crate::metrics::RewardWeights;
use crate::policy::{PolicyParams, Vocab};
use crate::synthdata::Pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    ChrfOnly,
    BleuOnly,
    Combined,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::ChrfOnly, AblationMode::BleuOnly, AblationMode::Combined];

    /// `(λ_chrF, λ_BLEU)` of the mode.
    pub fn weights(self) -> RewardWeights {
        let (c, b) = match self {
            AblationMode::ChrfOnly => (1.0, 0.0),
            AblationMode::BleuOnly => (0.0, 1.0),
            AblationMode::Combined => (0.5, 0.5),
        };
        RewardWeights { lambda_chrf: c, lambda_bleu: b }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::ChrfOnly => "chrf_only",
            AblationMode::BleuOnly => "bleu_only",
            AblationMode::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub before: f64,
    pub after: f64,
    pub gain: f64,
}

/// Trains a copy of `warm` once per reward mode with otherwise identical
/// settings and reports the forward chrF++ gain on `test`.
/// `hooks_for` supplies the observers of each mode's run.
pub fn ablate_rewards<'h>(
    warm: &PolicyParams,
    vocab: &Vocab,
    data: TrainData<'_>,
    test: &[Pair],
    settings: &TrainSettings,
    modes: &[AblationMode],
    hooks_for: &mut dyn FnMut(AblationMode) -> Box<dyn TrainHooks + 'h>,
) -> Result<Vec<AblationRow>, RoundtripError> {
    let tag = data.pair.target_tag;
    let max_len = settings.sampling.max_len;
    let chrf = settings.reward.chrf;
    let before = evaluate_forward(test, warm, vocab, tag, max_len, &chrf)?;
    let mut rows = Vec::new();
    for &mode in modes {
        let mut params = warm.clone();
        let mut s = settings.clone();
        s.reward.weights = mode.weights();
        let mut hooks = hooks_for(mode);
        train(&mut params, vocab, data, &s, hooks.as_mut())?;
        let after = evaluate_forward(test, &params, vocab, tag, max_len, &chrf)?;
        log::info!("{}: {before:.2} -> {after:.2}", mode.name());
        rows.push(AblationRow { mode, before, after, gain: after - before });
    }
    Ok(rows)
}
