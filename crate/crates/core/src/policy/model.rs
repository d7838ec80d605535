//! Pre-LN transformer encoder-decoder on the autodiff tape.
//!
//! The target language is selected by adding the embedding of its tag token
//! to every encoder frame; the decoder starts from `bos`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{BOS, EOS};
use super::PolicyError;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Longest encoder or decoder input.
    pub max_positions: usize,
    pub tie_embeddings: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            heads: 2,
            d_ff: 128,
            max_positions: 80,
            tie_embeddings: false,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.vocab_size <= EOS {
            return bad("vocab_size must cover the special tokens");
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.d_ff == 0 || self.max_positions < 2 {
            return bad("d_ff must be positive and max_positions at least 2");
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Names, shapes and initializers in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, f, p) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.max_positions);
    let w = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out: Vec<(String, Vec<usize>, Init)> = vec![
        ("tok_emb".into(), vec![v, d], Init::Normal(0.1)),
        ("enc_pos".into(), vec![p, d], Init::Normal(0.1)),
        ("dec_pos".into(), vec![p, d], Init::Normal(0.1)),
    ];
    let ln = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        out.push((format!("{name}.g"), vec![1, d], Init::Ones));
        out.push((format!("{name}.b"), vec![1, d], Init::Zeros));
    };
    let attn = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        for m in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{name}.{m}"), vec![d, d], w(d)));
        }
    };
    let ff = |out: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        out.push((format!("{name}.w1"), vec![d, f], w(d)));
        out.push((format!("{name}.b1"), vec![1, f], Init::Zeros));
        out.push((format!("{name}.w2"), vec![f, d], w(f)));
        out.push((format!("{name}.b2"), vec![1, d], Init::Zeros));
    };
    ln(&mut out, "enc.ln1");
    attn(&mut out, "enc.self");
    ln(&mut out, "enc.ln2");
    ff(&mut out, "enc.ff");
    ln(&mut out, "enc.ln_f");
    ln(&mut out, "dec.ln1");
    attn(&mut out, "dec.self");
    ln(&mut out, "dec.ln2");
    attn(&mut out, "dec.cross");
    ln(&mut out, "dec.ln3");
    ff(&mut out, "dec.ff");
    ln(&mut out, "dec.ln_f");
    if !cfg.tie_embeddings {
        out.push(("out.w".into(), vec![d, v], w(d)));
    }
    out.push(("out.b".into(), vec![1, v], Init::Zeros));
    out
}

/// All trainable tensors of the policy, in a fixed storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl PolicyParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Normal(std) => Tensor::randn(shape, std, rng),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(PolicyParams { config, names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, PolicyError> {
        config.validate()?;
        let expected = layout(&config);
        if named.len() != expected.len() {
            return Err(PolicyError::InvalidConfig(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, t), (want, shape, _)) in named.into_iter().zip(expected) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(PolicyError::InvalidConfig(format!(
                    "parameter {name:?} {:?} does not match expected {want:?} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(PolicyParams { config, names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// A deep copy with gradients dropped.
    pub fn snapshot(&self) -> Self {
        let mut s = self.clone();
        s.zero_grad();
        s
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Records every tensor on `tape`; trainable ones as leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars: Vec<Var> =
            self.tensors.iter().map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) }).collect();
        Bound::assemble(&self.config, vars)
    }

    /// Adds the tape gradients of the bound leaves into each tensor's
    /// gradient field.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<(), PolicyError> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.all) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Squared L2 norm of all accumulated gradients.
    pub fn grad_norm_sq(&self) -> f64 {
        self.tensors.iter().filter_map(Tensor::grad).flat_map(|g| g.iter()).map(|g| g * g).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ln {
    g: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
}

#[derive(Debug, Clone, Copy)]
struct Ff {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    all: Vec<Var>,
    tok_emb: Var,
    enc_pos: Var,
    dec_pos: Var,
    enc_ln1: Ln,
    enc_self: Attn,
    enc_ln2: Ln,
    enc_ff: Ff,
    enc_lnf: Ln,
    dec_ln1: Ln,
    dec_self: Attn,
    dec_ln2: Ln,
    dec_cross: Attn,
    dec_ln3: Ln,
    dec_ff: Ff,
    dec_lnf: Ln,
    out_w: Option<Var>,
    out_b: Var,
}

impl Bound {
    /// Handles for tensors already recorded in [`PolicyParams`] storage order.
    pub fn from_vars(cfg: &ModelConfig, vars: Vec<Var>) -> Result<Self, PolicyError> {
        let expected = layout(cfg).len();
        if vars.len() != expected {
            return Err(PolicyError::InvalidConfig(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        Ok(Bound::assemble(cfg, vars))
    }

    fn assemble(cfg: &ModelConfig, vars: Vec<Var>) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("layout and bound variables agree");
        let tok_emb = next();
        let enc_pos = next();
        let dec_pos = next();
        macro_rules! ln {
            () => {
                Ln { g: next(), b: next() }
            };
        }
        macro_rules! attn {
            () => {
                Attn { wq: next(), wk: next(), wv: next(), wo: next() }
            };
        }
        macro_rules! ff {
            () => {
                Ff { w1: next(), b1: next(), w2: next(), b2: next() }
            };
        }
        let enc_ln1 = ln!();
        let enc_self = attn!();
        let enc_ln2 = ln!();
        let enc_ff = ff!();
        let enc_lnf = ln!();
        let dec_ln1 = ln!();
        let dec_self = attn!();
        let dec_ln2 = ln!();
        let dec_cross = attn!();
        let dec_ln3 = ln!();
        let dec_ff = ff!();
        let dec_lnf = ln!();
        let out_w = if cfg.tie_embeddings { None } else { Some(next()) };
        let out_b = next();
        Bound {
            all: vars,
            tok_emb,
            enc_pos,
            dec_pos,
            enc_ln1,
            enc_self,
            enc_ln2,
            enc_ff,
            enc_lnf,
            dec_ln1,
            dec_self,
            dec_ln2,
            dec_cross,
            dec_ln3,
            dec_ff,
            dec_lnf,
            out_w,
            out_b,
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

fn layer_norm(t: &mut Tape, x: Var, ln: Ln, eps: f64) -> Result<Var, PolicyError> {
    let n = t.layer_norm(x, eps)?;
    let s = t.mul_row(n, ln.g)?;
    Ok(t.add_row(s, ln.b)?)
}

fn feed_forward(t: &mut Tape, x: Var, f: Ff) -> Result<Var, PolicyError> {
    let h = t.matmul(x, f.w1)?;
    let h = t.add_row(h, f.b1)?;
    let h = t.relu(h);
    let o = t.matmul(h, f.w2)?;
    Ok(t.add_row(o, f.b2)?)
}

/// Per-head scaled dot-product attention of `q` rows over `k`/`v` rows.
fn attend(t: &mut Tape, q: Var, k: Var, v: Var, head_dim: usize, causal: bool) -> Result<Var, PolicyError> {
    let s = t.matmul_bt(q, k)?;
    let s = t.scale(s, 1.0 / (head_dim as f64).sqrt());
    let s = if causal { t.causal_mask(s)? } else { s };
    let p = t.softmax(s, 1)?;
    Ok(t.matmul(p, v)?)
}

fn split_heads(t: &mut Tape, x: Var, cfg: &ModelConfig) -> Result<Vec<Var>, PolicyError> {
    let dh = cfg.head_dim();
    (0..cfg.heads).map(|h| Ok(t.slice_cols(x, h * dh, dh)?)).collect()
}

fn attention(
    t: &mut Tape,
    cfg: &ModelConfig,
    q_in: Var,
    kv_in: Var,
    a: Attn,
    causal: bool,
) -> Result<Var, PolicyError> {
    let q = t.matmul(q_in, a.wq)?;
    let k = t.matmul(kv_in, a.wk)?;
    let v = t.matmul(kv_in, a.wv)?;
    let (qs, ks, vs) = (split_heads(t, q, cfg)?, split_heads(t, k, cfg)?, split_heads(t, v, cfg)?);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        heads.push(attend(t, qs[h], ks[h], vs[h], cfg.head_dim(), causal)?);
    }
    let o = t.concat_cols(&heads)?;
    Ok(t.matmul(o, a.wo)?)
}

fn check_ids(ids: &[usize], cfg: &ModelConfig) -> Result<(), PolicyError> {
    match ids.iter().find(|&&i| i >= cfg.vocab_size) {
        Some(&id) => Err(PolicyError::UnknownId { id, vocab_size: cfg.vocab_size }),
        None => Ok(()),
    }
}

fn check_len(len: usize, cfg: &ModelConfig) -> Result<(), PolicyError> {
    if len > cfg.max_positions {
        return Err(PolicyError::SequenceTooLong { len, max: cfg.max_positions });
    }
    Ok(())
}

/// Encoder output `[|source|+1, d]` for `source · eos`, conditioned on `tag`.
pub fn encode(t: &mut Tape, p: &Bound, cfg: &ModelConfig, source: &[usize], tag: usize) -> Result<Var, PolicyError> {
    check_ids(source, cfg)?;
    check_ids(&[tag], cfg)?;
    let mut ids = source.to_vec();
    ids.push(EOS);
    check_len(ids.len(), cfg)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let x = t.embedding_lookup(p.tok_emb, &ids)?;
    let pos = t.embedding_lookup(p.enc_pos, &positions)?;
    let x = t.add(x, pos)?;
    let tag_row = t.embedding_lookup(p.tok_emb, &[tag])?;
    let mut x = t.add_row(x, tag_row)?;

    let h = layer_norm(t, x, p.enc_ln1, cfg.layer_norm_eps)?;
    let a = attention(t, cfg, h, h, p.enc_self, false)?;
    x = t.add(x, a)?;
    let h = layer_norm(t, x, p.enc_ln2, cfg.layer_norm_eps)?;
    let f = feed_forward(t, h, p.enc_ff)?;
    x = t.add(x, f)?;
    layer_norm(t, x, p.enc_lnf, cfg.layer_norm_eps)
}

fn output_logits(t: &mut Tape, p: &Bound, cfg: &ModelConfig, y: Var, mask: Var) -> Result<Var, PolicyError> {
    let h = layer_norm(t, y, p.dec_lnf, cfg.layer_norm_eps)?;
    let logits = match p.out_w {
        Some(w) => t.matmul(h, w)?,
        None => t.matmul_bt(h, p.tok_emb)?,
    };
    let logits = t.add_row(logits, p.out_b)?;
    Ok(t.add_row(logits, mask)?)
}

/// Constant `[1, V]` row: 0 for emittable ids, −∞ elsewhere.
pub fn output_mask(t: &mut Tape, vocab_size: usize, unemittable: &[usize]) -> Var {
    let mut row = vec![0.0; vocab_size];
    for &i in unemittable {
        row[i] = f64::NEG_INFINITY;
    }
    t.constant_from(vec![1, vocab_size], row)
}

/// Teacher-forced decoder logits `[T, V]` for decoder inputs `bos · y[..T-1]`.
pub fn decode_logits(
    t: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    enc: Var,
    targets: &[usize],
    mask: Var,
) -> Result<Var, PolicyError> {
    if targets.is_empty() {
        return Err(PolicyError::EmptySequence);
    }
    check_ids(targets, cfg)?;
    check_len(targets.len(), cfg)?;
    let mut inputs = Vec::with_capacity(targets.len());
    inputs.push(BOS);
    inputs.extend_from_slice(&targets[..targets.len() - 1]);
    let positions: Vec<usize> = (0..inputs.len()).collect();
    let y = t.embedding_lookup(p.tok_emb, &inputs)?;
    let pos = t.embedding_lookup(p.dec_pos, &positions)?;
    let mut y = t.add(y, pos)?;

    let h = layer_norm(t, y, p.dec_ln1, cfg.layer_norm_eps)?;
    let a = attention(t, cfg, h, h, p.dec_self, true)?;
    y = t.add(y, a)?;
    let h = layer_norm(t, y, p.dec_ln2, cfg.layer_norm_eps)?;
    let a = attention(t, cfg, h, enc, p.dec_cross, false)?;
    y = t.add(y, a)?;
    let h = layer_norm(t, y, p.dec_ln3, cfg.layer_norm_eps)?;
    let f = feed_forward(t, h, p.dec_ff)?;
    y = t.add(y, f)?;
    output_logits(t, p, cfg, y, mask)
}

/// Teacher-forced log-probabilities of one target sequence.
#[derive(Debug, Clone, Copy)]
pub struct TeacherForced {
    /// Full log-distribution `[T, V]`.
    pub log_probs: Var,
    /// Log-probability of each target token, `[T]`.
    pub token_log_probs: Var,
}

pub fn teacher_forced(
    t: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    source: &[usize],
    tag: usize,
    targets: &[usize],
    mask: Var,
) -> Result<TeacherForced, PolicyError> {
    let enc = encode(t, p, cfg, source, tag)?;
    let logits = decode_logits(t, p, cfg, enc, targets, mask)?;
    let log_probs = t.log_softmax(logits, 1)?;
    let token_log_probs = t.gather(log_probs, targets)?;
    Ok(TeacherForced { log_probs, token_log_probs })
}

/// Key/value cache for step-wise decoding on a no-grad tape.
///
/// Every kernel accumulates in a fixed order, so the logits produced here
/// are bit-identical to the matching rows of [`decode_logits`].
#[derive(Debug, Clone)]
pub struct DecodeCache {
    cross_k: Vec<Var>,
    cross_v: Vec<Var>,
    self_k: Vec<Option<Var>>,
    self_v: Vec<Option<Var>>,
    position: usize,
}

impl DecodeCache {
    pub fn new(t: &mut Tape, p: &Bound, cfg: &ModelConfig, enc: Var) -> Result<Self, PolicyError> {
        let k = t.matmul(enc, p.dec_cross.wk)?;
        let v = t.matmul(enc, p.dec_cross.wv)?;
        Ok(DecodeCache {
            cross_k: split_heads(t, k, cfg)?,
            cross_v: split_heads(t, v, cfg)?,
            self_k: vec![None; cfg.heads],
            self_v: vec![None; cfg.heads],
            position: 0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Feeds one decoder input token; returns the logits row `[1, V]` for
    /// the next position.
    pub fn step(
        &mut self,
        t: &mut Tape,
        p: &Bound,
        cfg: &ModelConfig,
        token: usize,
        mask: Var,
    ) -> Result<Var, PolicyError> {
        check_ids(&[token], cfg)?;
        check_len(self.position + 1, cfg)?;
        let y = t.embedding_lookup(p.tok_emb, &[token])?;
        let pos = t.embedding_lookup(p.dec_pos, &[self.position])?;
        let mut y = t.add(y, pos)?;

        let h = layer_norm(t, y, p.dec_ln1, cfg.layer_norm_eps)?;
        let q = t.matmul(h, p.dec_self.wq)?;
        let k = t.matmul(h, p.dec_self.wk)?;
        let v = t.matmul(h, p.dec_self.wv)?;
        let (qs, ks, vs) = (split_heads(t, q, cfg)?, split_heads(t, k, cfg)?, split_heads(t, v, cfg)?);
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let kk = match self.self_k[hd] {
                Some(prev) => t.concat_rows(&[prev, ks[hd]])?,
                None => ks[hd],
            };
            let vv = match self.self_v[hd] {
                Some(prev) => t.concat_rows(&[prev, vs[hd]])?,
                None => vs[hd],
            };
            self.self_k[hd] = Some(kk);
            self.self_v[hd] = Some(vv);
            heads.push(attend(t, qs[hd], kk, vv, cfg.head_dim(), false)?);
        }
        let o = t.concat_cols(&heads)?;
        let a = t.matmul(o, p.dec_self.wo)?;
        y = t.add(y, a)?;

        let h = layer_norm(t, y, p.dec_ln2, cfg.layer_norm_eps)?;
        let q = t.matmul(h, p.dec_cross.wq)?;
        let qs = split_heads(t, q, cfg)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for ((&q, &k), &v) in qs.iter().zip(&self.cross_k).zip(&self.cross_v) {
            heads.push(attend(t, q, k, v, cfg.head_dim(), false)?);
        }
        let o = t.concat_cols(&heads)?;
        let a = t.matmul(o, p.dec_cross.wo)?;
        y = t.add(y, a)?;

        let h = layer_norm(t, y, p.dec_ln3, cfg.layer_norm_eps)?;
        let f = feed_forward(t, h, p.dec_ff)?;
        y = t.add(y, f)?;
        self.position += 1;
        output_logits(t, p, cfg, y, mask)
    }
}
