use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::grad_check_many;

fn toy_vocab() -> Vocab {
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    Vocab::new(&["en", "xx"], words).unwrap()
}

fn toy_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        heads: 2,
        d_ff: 32,
        max_positions: 24,
        ..ModelConfig::default()
    }
}

fn toy_params(vocab: &Vocab, seed: u64) -> PolicyParams {
    PolicyParams::init(toy_config(vocab), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn src(v: &Vocab, words: &str) -> Vec<usize> {
    v.encode(&crate::synthdata::Sentence::parse(words))
}

#[test]
fn encoder_is_deterministic_and_tag_sensitive() {
    let v = toy_vocab();
    let p = toy_params(&v, 1);
    let s = src(&v, "w1 w2 w3");
    let (en, xx) = (v.lang_tag("en").unwrap(), v.lang_tag("xx").unwrap());
    let a = encode_prompt(&s, xx, &p, &v).unwrap();
    assert_eq!(a, encode_prompt(&s, xx, &p, &v).unwrap());
    assert_eq!(a.shape(), &[4, 16]);
    assert_ne!(a, encode_prompt(&s, en, &p, &v).unwrap());
    assert_eq!(encode_prompt(&[], xx, &p, &v).unwrap().shape(), &[1, 16]);
    assert!(matches!(encode_prompt(&[999], xx, &p, &v), Err(PolicyError::UnknownId { id: 999, .. })));
}

#[test]
fn sampling_is_reproducible_from_the_seed() {
    let v = toy_vocab();
    let p = toy_params(&v, 2);
    let s = src(&v, "w4 w5");
    let tag = v.lang_tag("xx").unwrap();
    let cfg = SamplingConfig { max_len: 12, seed: 9, ..SamplingConfig::default() };
    let a = sample(&s, tag, &p, &v, &cfg).unwrap();
    assert_eq!(a, sample(&s, tag, &p, &v, &cfg).unwrap());
    let others: Vec<_> =
        (10..20).map(|seed| sample(&s, tag, &p, &v, &SamplingConfig { seed, ..cfg.clone() }).unwrap().tokens).collect();
    assert!(others.iter().any(|t| *t != a.tokens));
}

#[test]
fn sampled_sequences_respect_the_contract() {
    let v = toy_vocab();
    let p = toy_params(&v, 3);
    let tag = v.lang_tag("en").unwrap();
    let mut session = InferenceSession::new(&p, &v);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SamplingConfig { max_len: 10, ..SamplingConfig::default() };
    for i in 0..20 {
        let s = src(&v, &format!("w{} w{}", i, i + 3));
        let seq = session.sample(&s, tag, &cfg, &mut rng).unwrap();
        assert!(seq.len() <= 10 && !seq.is_empty());
        assert_eq!(seq.truncated, *seq.tokens.last().unwrap() != EOS);
        assert!(seq.tokens.iter().all(|&t| t == EOS || v.is_content(t)));
        assert!(seq.sample_logprobs.iter().all(|&l| l <= 0.0));
        assert!(seq.model_logprobs.iter().all(|l| l.is_finite() && *l <= 0.0));
        // Step-wise decoding reproduces teacher forcing exactly.
        let tf = session.sequence_logprobs(&s, tag, &seq.tokens).unwrap();
        assert_eq!(tf, seq.model_logprobs);
    }
}

#[test]
fn top_k_one_is_greedy_with_zero_logprob() {
    let v = toy_vocab();
    let p = toy_params(&v, 5);
    let s = src(&v, "w7 w8 w9");
    let tag = v.lang_tag("xx").unwrap();
    let cfg = SamplingConfig { top_k: 1, temperature: 0.7, max_len: 8, seed: 3, ..SamplingConfig::default() };
    let seq = sample(&s, tag, &p, &v, &cfg).unwrap();
    assert!(seq.sample_logprobs.iter().all(|&l| l == 0.0));
    let mut session = InferenceSession::new(&p, &v);
    assert_eq!(session.greedy(&s, tag, 8).unwrap().tokens, seq.tokens);
    let dists = session.sequence_log_dists(&s, tag, &seq.tokens).unwrap();
    for (row, &tok) in dists.iter().zip(&seq.tokens) {
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(row[tok], best);
    }
}

#[test]
fn every_position_is_a_distribution() {
    let v = toy_vocab();
    let p = toy_params(&v, 6);
    let s = src(&v, "w1 w1 w2");
    let targets = src(&v, "w3 w4 w5 w6");
    let dists = InferenceSession::new(&p, &v).sequence_log_dists(&s, v.lang_tag("en").unwrap(), &targets).unwrap();
    assert_eq!(dists.len(), 4);
    for row in dists {
        let total: f64 = row.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() <= 1e-9, "{total}");
        for id in v.unemittable() {
            assert_eq!(row[id], f64::NEG_INFINITY);
        }
    }
}

#[test]
fn logprob_gradients_match_finite_differences() {
    let v = Vocab::new(&["en", "xx"], (0..6).map(|i| format!("t{i}"))).unwrap();
    for tie in [false, true] {
        let cfg = ModelConfig {
            vocab_size: v.len(),
            d_model: 4,
            heads: 2,
            d_ff: 6,
            max_positions: 6,
            tie_embeddings: tie,
            ..ModelConfig::default()
        };
        let p = PolicyParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let source = vec![6, 8, 7];
        let targets = vec![9, 6, EOS];
        let tag = v.lang_tag("xx").unwrap();
        let unemittable = v.unemittable();
        let report = grad_check_many(
            |t, vars| {
                let b = Bound::from_vars(&cfg, vars.to_vec()).map_err(|e| match e {
                    PolicyError::Tensor(e) => e,
                    other => panic!("{other}"),
                })?;
                let mask = output_mask(t, cfg.vocab_size, &unemittable);
                let tf = teacher_forced(t, &b, &cfg, &source, tag, &targets, mask).expect("valid ids");
                Ok(t.sum(tf.token_log_probs))
            },
            p.tensors(),
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "tie={tie}: {report:?}");
        assert_eq!(report.coordinates, p.num_scalars());
    }
}

#[test]
fn golden_sampling_trace() {
    let v = toy_vocab();
    let p = toy_params(&v, 2024);
    let s = src(&v, "w3 w1 w4 w1 w5");
    let cfg = SamplingConfig { temperature: 1.8, top_k: 100, top_p: 0.95, max_len: 16, seed: 42 };
    let seq = sample(&s, v.lang_tag("xx").unwrap(), &p, &v, &cfg).unwrap();
    assert_eq!(seq.tokens, GOLDEN_TRACE, "trace changed: {:?}", seq.tokens);
}

// Recorded from this implementation; guards against silent sampler changes.
const GOLDEN_TRACE: &[usize] = &[26, 29, 32, 8, 16, 35, 24, 26, 31, 30, 13, 20, 20, 30, 10, 27];

#[test]
fn checkpoint_round_trip_preserves_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let v = toy_vocab();
    let p = toy_params(&v, 8);
    let ck = PolicyCheckpoint { params: p.clone(), vocab: v.clone(), extra: serde_json::json!({"step": 3}) };
    let path = dir.path().join("policy.ckpt");
    ck.save(&path).unwrap();
    let back = PolicyCheckpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_container().to_bytes(), ck.to_container().to_bytes());

    let mut ckb = ck.to_container();
    ckb.tensors.pop();
    assert!(PolicyCheckpoint::from_container(ckb).is_err());
}

#[test]
fn overlong_inputs_are_rejected() {
    let v = toy_vocab();
    let p = toy_params(&v, 9);
    let long: Vec<usize> = vec![6; 30];
    let tag = v.lang_tag("xx").unwrap();
    assert!(matches!(encode_prompt(&long, tag, &p, &v), Err(PolicyError::SequenceTooLong { .. })));
    let cfg = SamplingConfig { max_len: 64, ..SamplingConfig::default() };
    assert!(sample(&[6], tag, &p, &v, &cfg).is_err());
    assert!(matches!(sequence_logprobs(&[], &[6], tag, &p, &v), Err(PolicyError::EmptySequence)));
}
