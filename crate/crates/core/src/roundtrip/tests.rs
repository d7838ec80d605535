use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grpo::{GrpoConfig, StepRecord};
use crate::policy::{ModelConfig, PolicyParams};
use crate::synthdata::{train_trigram_lm, Pair};

fn vocab() -> Vocab {
    Vocab::new(&["en", "xx"], (0..6).map(|i| format!("w{i}"))).unwrap()
}

fn params(v: &Vocab, seed: u64) -> PolicyParams {
    let cfg = ModelConfig {
        vocab_size: v.len(),
        d_model: 16,
        heads: 2,
        d_ff: 32,
        max_positions: 12,
        ..ModelConfig::default()
    };
    PolicyParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn sentences(n: usize, seed: u64) -> Vec<Sentence> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=4);
            Sentence((0..len).map(|_| format!("w{}", rng.gen_range(0..6))).collect())
        })
        .collect()
}

fn copy_pairs(n: usize, seed: u64) -> Vec<Pair> {
    sentences(n, seed).into_iter().map(|s| Pair { source: s.clone(), target: s }).collect()
}

fn settings(steps: usize) -> TrainSettings {
    TrainSettings {
        grpo: GrpoConfig { learning_rate: 1e-3, ref_update_every: 3, ..GrpoConfig::default() },
        sampling: SamplingConfig { max_len: 8, ..SamplingConfig::default() },
        eval_every: 4,
        checkpoint_every: 0,
        max_steps: Some(steps),
        seed: 17,
        ..TrainSettings::default()
    }
}

fn copy_model(v: &Vocab) -> PolicyParams {
    let mut p = params(v, 1);
    let ex = parallel_examples(&copy_pairs(200, 2), v, "en", "xx", Directions::Both).unwrap();
    let cfg = WarmStartConfig { steps: 800, batch_size: 8, learning_rate: 1e-2, ..WarmStartConfig::default() };
    let losses = warm_start(&mut p, v, &ex, &cfg, 3).unwrap();
    assert!(losses.last().unwrap() < &(losses[0] * 0.2), "{} -> {}", losses[0], losses.last().unwrap());
    p
}

#[test]
fn rollout_shape_determinism_and_reward_provenance() {
    let v = vocab();
    let p = params(&v, 4);
    let pair = LangPair::new(&v, "en", "xx").unwrap();
    let reward = RewardSettings::default();
    let cfg = SamplingConfig { max_len: 8, ..SamplingConfig::default() };
    let src = Sentence::parse("w1 w2 w3");
    let run = |seed| {
        let mut session = InferenceSession::new(&p, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        roundtrip_rollout(&src, 4, &mut session, &v, &cfg, pair, &reward, 1e-6, &mut rng).unwrap().unwrap()
    };
    let g = run(5);
    assert_eq!(g.trajectories.len(), 4);
    assert_eq!(g.advantages.len(), 4);
    assert_eq!(g, run(5));
    for t in &g.trajectories {
        let r = reward.score(&t.reconstruction.text(), &src.text()).unwrap();
        assert_eq!(r, t.reward);
        assert!((0.0..=reward.weights.max_reward()).contains(&t.reward));
        assert_eq!(v.decode(&t.backward.tokens), t.reconstruction);
    }

    let full = g.to_train_group(pair, CreditScope::FullRoundtrip);
    let back = g.to_train_group(pair, CreditScope::BackwardOnly);
    for ((t, f), b) in g.trajectories.iter().zip(&full.members).zip(&back.members) {
        assert_eq!(f.len(), 2);
        assert_eq!(b.len(), 1);
        assert_eq!(f[0].tokens, t.forward.tokens);
        assert_eq!(f[0].tag, pair.target_tag);
        assert_eq!(f[1], b[0]);
        assert_eq!(b[0].source, t.forward_content());
        assert_eq!(b[0].tag, pair.source_tag);
    }

    let mut session = InferenceSession::new(&p, &v);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let empty = roundtrip_rollout(&Sentence(vec![]), 4, &mut session, &v, &cfg, pair, &reward, 1e-6, &mut rng);
    assert!(empty.unwrap().is_none());
    assert!(roundtrip_rollout(&src, 1, &mut session, &v, &cfg, pair, &reward, 1e-6, &mut rng).is_err());
}

#[test]
fn copy_language_gives_near_perfect_degenerate_groups() {
    let v = vocab();
    let p = copy_model(&v);
    let pair = LangPair::new(&v, "en", "xx").unwrap();
    let cfg = SamplingConfig { temperature: 0.3, max_len: 8, ..SamplingConfig::default() };
    let mut session = InferenceSession::new(&p, &v);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut reward, mut adv, mut n) = (0.0, 0.0, 0.0);
    for s in sentences(20, 99) {
        let g = roundtrip_rollout(&s, 4, &mut session, &v, &cfg, pair, &RewardSettings::default(), 1e-6, &mut rng)
            .unwrap()
            .unwrap();
        reward += g.rewards().iter().sum::<f64>();
        adv += g.advantages.iter().map(|a| a.abs()).sum::<f64>();
        n += 4.0;
    }
    assert!(reward / n > 0.9, "mean reward {}", reward / n);
    assert!(adv / n < 0.2, "mean |A| {}", adv / n);

    let test = copy_pairs(30, 7);
    let chrf = evaluate_forward(&test, &p, &v, pair.target_tag, 8, &Default::default()).unwrap();
    assert!(chrf > 95.0, "{chrf}");
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let v = vocab();
    let mut p = params(&v, 8);
    let before = p.clone();
    let sources = sentences(6, 1);
    let dev = copy_pairs(4, 2);
    let data = TrainData { sources: &sources, dev: &dev, pair: LangPair::new(&v, "en", "xx").unwrap() };
    let mut s = settings(10);
    s.grpo.epochs = 0;
    let out = train(&mut p, &v, data, &s, &mut NoHooks).unwrap();
    assert_eq!(p, before);
    assert_eq!(out.steps, 0);
    assert_eq!(out.curve.len(), 1);
    assert_eq!(out.curve[0].backward_reward, None);
}

#[derive(Default)]
struct Recorder {
    steps: Vec<StepRecord>,
    rows: Vec<CurveRow>,
    checkpoints: Vec<usize>,
}

impl TrainHooks for Recorder {
    fn on_step(&mut self, r: &StepRecord) -> Result<(), RoundtripError> {
        self.steps.push(r.clone());
        Ok(())
    }
    fn on_curve(&mut self, r: &CurveRow) -> Result<(), RoundtripError> {
        self.rows.push(r.clone());
        Ok(())
    }
    fn on_checkpoint(&mut self, step: usize, _: &PolicyParams, _: &crate::grpo::AdamW) -> Result<(), RoundtripError> {
        self.checkpoints.push(step);
        Ok(())
    }
}

#[test]
fn training_is_deterministic_and_syncs_the_reference() {
    let v = vocab();
    let sources = sentences(9, 3);
    let dev = copy_pairs(4, 4);
    let data = TrainData { sources: &sources, dev: &dev, pair: LangPair::new(&v, "en", "xx").unwrap() };
    let mut s = settings(10);
    s.checkpoint_every = 4;
    let run = || {
        let mut p = params(&v, 9);
        let mut rec = Recorder::default();
        let out = train(&mut p, &v, data, &s, &mut rec).unwrap();
        (p, out, rec)
    };
    let (p1, o1, r1) = run();
    let (p2, o2, _) = run();
    assert_eq!(p1, p2);
    assert_eq!(o1, o2);
    assert_eq!(o1.steps, 10);
    assert_eq!(o1.ref_syncs, 10 / 3);
    assert_eq!(r1.steps, o1.records);
    assert_eq!(r1.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 4, 8, 10]);
    assert_eq!(r1.checkpoints, vec![4, 8, 10]);
    assert!(o1.records.iter().all(|r| r.loss.is_finite() && r.kl_mean >= 0.0));
    assert_ne!(p1, params(&v, 9));
    assert!(CurveRow::CSV_HEADER.split(',').count() == o1.curve[1].to_csv().split(',').count());
}

#[test]
fn total_steps_follow_epochs_and_cap() {
    let s = TrainSettings { max_steps: None, ..TrainSettings::default() };
    assert_eq!(s.total_steps(2000), 2000);
    assert_eq!(s.total_steps(5), 6);
    assert_eq!(TrainSettings { max_steps: Some(7), ..s }.total_steps(2000), 7);
}

#[test]
fn evaluation_rejects_empty_inputs() {
    let v = vocab();
    let p = params(&v, 10);
    let lm = train_trigram_lm(&sentences(20, 1), 0.1).unwrap();
    assert!(matches!(evaluate_fluency(&[], &lm), Err(RoundtripError::Empty(_))));
    assert!(evaluate_forward(&[], &p, &v, 4, 8, &Default::default()).is_err());
    let own = sentences(20, 1);
    assert!(evaluate_fluency(&own, &lm).unwrap() > evaluate_fluency(&sentences(20, 555), &lm).unwrap());
}

#[test]
fn ablation_modes_and_substreams() {
    let w: Vec<(f64, f64)> =
        AblationMode::ALL.iter().map(|m| (m.weights().lambda_chrf, m.weights().lambda_bleu)).collect();
    assert_eq!(w, vec![(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)]);
    assert_ne!(substream(1, "data"), substream(1, "sampling"));
    assert_ne!(substream(1, "data"), substream(2, "data"));
    assert_eq!(substream(3, "init"), substream(3, "init"));
}
