use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::policy::PolicyParams;
use crate::tensor::checkpoint::{Checkpoint, CheckpointError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(GrpoError::Config("AdamW betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(GrpoError::Config("AdamW eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(GrpoError::Config("AdamW weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamWMeta {
    kind: String,
    lr: f64,
    config: AdamWConfig,
    steps: u64,
}

const ADAMW_KIND: &str = "adamw";

/// AdamW with decoupled weight decay:
/// `θ ← θ·(1 − η·λ) − η·m̂/(√v̂ + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub config: AdamWConfig,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, config: AdamWConfig, params: &PolicyParams) -> Result<Self, GrpoError> {
        config.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(GrpoError::Config("learning rate must be positive".into()));
        }
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Ok(AdamW { lr, config, steps: 0, m: zeros(), v: zeros() })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// Parameters without a gradient are treated as having a zero one.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut PolicyParams) -> Result<(), GrpoError> {
        if params.tensors().len() != self.m.len() {
            return Err(GrpoError::StateMismatch(format!(
                "{} moment buffers for {} parameters",
                self.m.len(),
                params.tensors().len()
            )));
        }
        for ((name, t), m) in params.named().zip(&self.m) {
            if t.numel() != m.len() {
                return Err(GrpoError::StateMismatch(format!("parameter {name:?} changed size")));
            }
            if let Some(index) = t.grad().and_then(|g| g.iter().position(|x| !x.is_finite())) {
                return Err(GrpoError::NanGradient { param: name.to_string(), index });
            }
        }
        self.steps += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        let decay = 1.0 - self.lr * weight_decay;
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            for (((x, g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *x = *x * decay - self.lr * update;
            }
            t.zero_grad();
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = AdamWMeta { kind: ADAMW_KIND.into(), lr: self.lr, config: self.config.clone(), steps: self.steps };
        let mut ck = Checkpoint::new(serde_json::to_string(&meta).expect("metadata serializes"));
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ck.push(format!("m.{i}"), Tensor::vector(m.clone()));
            ck.push(format!("v.{i}"), Tensor::vector(v.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, params: &PolicyParams) -> Result<Self, GrpoError> {
        let meta: AdamWMeta =
            serde_json::from_str(&ck.meta).map_err(|e| CheckpointError::Corrupt(format!("optimizer metadata: {e}")))?;
        if meta.kind != ADAMW_KIND {
            return Err(
                CheckpointError::Corrupt(format!("expected an optimizer checkpoint, found {:?}", meta.kind)).into()
            );
        }
        let mut opt = AdamW::new(meta.lr, meta.config, params)?;
        opt.steps = meta.steps;
        if ck.tensors.len() != 2 * params.tensors().len() {
            return Err(GrpoError::StateMismatch(format!(
                "{} optimizer tensors for {} parameters",
                ck.tensors.len(),
                params.tensors().len()
            )));
        }
        for (i, t) in params.tensors().iter().enumerate() {
            let (m, v) = (ck.get(&format!("m.{i}"))?, ck.get(&format!("v.{i}"))?);
            if m.numel() != t.numel() || v.numel() != t.numel() {
                return Err(GrpoError::StateMismatch(format!("moment {i} has the wrong size")));
            }
            opt.m[i] = m.data().to_vec();
            opt.v[i] = v.data().to_vec();
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;
    use rand::SeedableRng;

    fn params() -> PolicyParams {
        let cfg = ModelConfig { vocab_size: 8, d_model: 4, heads: 1, d_ff: 4, max_positions: 4, ..Default::default() };
        PolicyParams::init(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = params();
        let before = p.clone();
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(0.1, cfg.clone(), &p).unwrap();
        let g0: Vec<f64> = (0..p.tensors()[0].numel()).map(|i| (i as f64 - 3.0) * 0.5).collect();
        p.tensors_mut()[0].accumulate_grad(&g0).unwrap();
        opt.step(&mut p).unwrap();
        // After one step m̂ = g and v̂ = g², so the move is lr·g/(|g| + eps).
        for ((x, x0), g) in p.tensors()[0].data().iter().zip(before.tensors()[0].data()).zip(&g0) {
            let expected = x0 * (1.0 - 0.1 * cfg.weight_decay) - 0.1 * g / (g.abs() + cfg.eps);
            assert!((x - expected).abs() < 1e-12);
        }
        // Tensors with no gradient only decay.
        for (x, x0) in p.tensors()[1].data().iter().zip(before.tensors()[1].data()) {
            assert!((x - x0 * (1.0 - 0.1 * cfg.weight_decay)).abs() < 1e-15);
        }
        assert!(p.tensors().iter().all(|t| t.grad().is_none()));
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut p = params();
        let mut opt = AdamW::new(0.1, AdamWConfig::default(), &p).unwrap();
        let n = p.tensors()[2].numel();
        let mut g = vec![0.0; n];
        g[n - 1] = f64::NAN;
        p.tensors_mut()[2].accumulate_grad(&g).unwrap();
        let before = p.clone();
        match opt.step(&mut p) {
            Err(GrpoError::NanGradient { param, index }) => {
                assert_eq!(param, p.names()[2]);
                assert_eq!(index, n - 1);
            }
            other => panic!("{other:?}"),
        }
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn state_round_trips() {
        let mut p = params();
        let mut opt = AdamW::new(0.01, AdamWConfig::default(), &p).unwrap();
        for _ in 0..3 {
            let g = vec![0.3; p.tensors()[0].numel()];
            p.tensors_mut()[0].accumulate_grad(&g).unwrap();
            opt.step(&mut p).unwrap();
        }
        let bytes = opt.to_checkpoint().to_bytes();
        let back = AdamW::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &p).unwrap();
        assert_eq!(back, opt);
        assert!(AdamW::new(0.0, AdamWConfig::default(), &p).is_err());
        assert!(AdamWConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
