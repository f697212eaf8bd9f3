//! AdamW with decoupled weight decay, global-norm gradient clipping, and
//! the training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::net::PassVars;
use crate::model::params::ParamStore;
use crate::tensor::tape::Gradients;
use crate::tensor::Tensor;

fn default_learning_rate() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_grad_clip() -> f64 {
    0.3
}
fn default_batch_size() -> usize {
    8
}
fn default_epochs() -> usize {
    30
}
fn default_seed() -> u64 {
    0
}
fn default_val_fraction() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Fraction of samples held out for per-epoch metrics; 0 evaluates on
    /// the training set itself.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulator aligned with the store's
/// registration order.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    entries: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamStore) -> Self {
        GradBuffer {
            entries: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// Add `scale` times the tape gradients of every bound parameter.
    /// Parameters that did not participate contribute zero.
    pub fn accumulate(
        &mut self,
        params: &ParamStore,
        vars: &PassVars,
        grads: &Gradients,
        scale: f64,
    ) -> Result<()> {
        for (slot, (name, _)) in self.entries.iter_mut().zip(params.iter()) {
            let var = vars.get(name)?;
            if let Some(g) = grads.get(var) {
                for (acc, gi) in slot.iter_mut().zip(g) {
                    *acc += scale * gi;
                }
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.iter().all(|g| g.is_finite()))
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.as_slice())
    }
}

/// Scale all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm; returns the pre-clip norm.
pub fn clip_gradients(grads: &mut GradBuffer, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = max_norm / norm;
        for e in grads.entries.iter_mut() {
            for g in e.iter_mut() {
                *g *= factor;
            }
        }
    }
    Ok(norm)
}

/// AdamW optimizer state: step count plus first/second moments aligned
/// with the parameter store.
#[derive(Debug, Clone)]
pub struct AdamW {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamW { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with bias-corrected moments and decoupled weight decay
    /// (decay acts on the weights directly, not through the moments).
    /// Non-finite gradients abort before any state is touched.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &GradBuffer,
        config: &TrainConfig,
    ) -> Result<()> {
        config.validate()?;
        if grads.entries.len() != self.m.len() {
            return Err(Error::Config(format!(
                "gradient buffer has {} groups, optimizer has {}",
                grads.entries.len(),
                self.m.len()
            )));
        }
        if !grads.is_finite() {
            return Err(Error::Training("non-finite gradient; step aborted".into()));
        }
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - config.beta1.powi(t as i32);
        let bc2 = 1.0 - config.beta2.powi(t as i32);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for (idx, name) in names.iter().enumerate() {
            let g = &grads.entries[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = params.get_mut(name)?;
            let pv = p.values_mut();
            for j in 0..pv.len() {
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                pv[j] = pv[j] * (1.0 - config.learning_rate * config.weight_decay)
                    - config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
            p.check_finite()?;
        }
        Ok(())
    }

    /// Serialize the optimizer state as named blocks (`opt.step`,
    /// `opt.m.<param>`, `opt.v.<param>`).
    pub fn state_blocks(&self, params: &ParamStore) -> Vec<(String, Tensor)> {
        let mut blocks = vec![("opt.step".to_string(), Tensor::scalar(self.step as f64))];
        for (idx, (name, t)) in params.iter().enumerate() {
            blocks.push((
                format!("opt.m.{name}"),
                Tensor::new(t.shape().to_vec(), self.m[idx].clone()).expect("aligned"),
            ));
            blocks.push((
                format!("opt.v.{name}"),
                Tensor::new(t.shape().to_vec(), self.v[idx].clone()).expect("aligned"),
            ));
        }
        blocks
    }

    /// Restore state written by [`AdamW::state_blocks`]; every moment block
    /// must be present with a matching shape.
    pub fn load_state_blocks(&mut self, params: &ParamStore, blocks: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| -> Result<&Tensor> {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Data(format!("optimizer state missing block '{name}'")))
        };
        let step = find("opt.step")?.scalar_value()?;
        if step < 0.0 || step.fract() != 0.0 {
            return Err(Error::Data(format!("bad optimizer step count {step}")));
        }
        let mut m = Vec::with_capacity(self.m.len());
        let mut v = Vec::with_capacity(self.v.len());
        for (name, t) in params.iter() {
            let mb = find(&format!("opt.m.{name}"))?;
            let vb = find(&format!("opt.v.{name}"))?;
            if mb.shape() != t.shape() || vb.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "optimizer state for '{name}' has shape {:?}/{:?}, parameter is {:?}",
                    mb.shape(),
                    vb.shape(),
                    t.shape()
                )));
            }
            m.push(mb.values().to_vec());
            v.push(vb.values().to_vec());
        }
        self.step = step as u64;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
