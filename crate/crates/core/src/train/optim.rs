use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore};

/// Transformer warmup schedule:
/// `factor · D^-½ · min(step^-½, step · warmup^-3/2)`.
pub fn noam_lr(step: usize, model_dim: usize, warmup: usize, factor: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    factor * (model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Noam { model_dim: usize, warmup: usize, factor: f64 },
    Constant(f64),
}

impl Schedule {
    /// Learning rate for a 1-based step.
    pub fn lr(&self, step: usize) -> f64 {
        match *self {
            Schedule::Noam {
                model_dim,
                warmup,
                factor,
            } => noam_lr(step, model_dim, warmup, factor),
            Schedule::Constant(lr) => lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Moments used with the warmup schedule.
    pub const NOAM: AdamConfig = AdamConfig {
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-9,
    };
    pub const DEFAULT: AdamConfig = AdamConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Parameter gradients summed over several graphs, indexed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn new(store: &ParamStore) -> Self {
        Self(vec![None; store.len()])
    }

    pub fn from_gradients(store: &ParamStore, grads: &Gradients) -> Self {
        let mut out = Self::new(store);
        out.accumulate(grads, 1.0);
        out
    }

    /// Adds `weight ·` every parameter gradient in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, weight: f64) {
        for (id, g) in grads.params() {
            let slot = self.0[id.index()].get_or_insert_with(|| vec![0.0; g.len()]);
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += weight * x;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Global L2 norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.0.iter().enumerate().filter_map(|(i, g)| g.as_deref().map(|g| (i, g)))
    }
}

/// Adaptive-moment optimizer with bias correction. Moments are indexed by
/// parameter id.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        Self {
            cfg,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Applies one update. Gradients are first rescaled so that their global
    /// L2 norm does not exceed `clip` (when given). Returns the norm before
    /// clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64, clip: Option<f64>) -> Result<f64> {
        let norm = grads.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient"));
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, g) in grads.iter() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.tensor_mut(ParamId(i)).data_mut();
            for j in 0..w.len() {
                let gj = g[j] * scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(norm)
    }
}
