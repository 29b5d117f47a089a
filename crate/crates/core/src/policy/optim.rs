use serde::{Deserialize, Serialize};

use super::gradient::{add_scaled, zeros_like};
use super::model::ModelParams;
use crate::error::{config_err, Result};

/// `W ← W − α·g` for every group.
pub fn apply_update(params: &mut ModelParams, grads: &ModelParams, alpha: f64) -> Result<()> {
    add_scaled(params, grads, -alpha)
}

/// Update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Gradient descent, with heavy-ball momentum when `momentum > 0`.
    #[default]
    Sgd,
    /// Per-coordinate adaptive steps (first/second moment estimates with
    /// bias correction, `β₁ = momentum` or 0.9 when momentum is 0,
    /// `β₂ = 0.999`, `ε = 1e-8`).
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Heavy-ball coefficient; 0 gives plain gradient descent.
    pub momentum: f64,
    /// Rescale the gradient when its global L2 norm exceeds this; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.0,
            max_grad_norm: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(config_err("max_grad_norm must be non-negative"));
        }
        Ok(())
    }
}

/// Stateful update rule with optional norm clipping.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    /// Momentum buffer (SGD) or first-moment estimate (Adam).
    velocity: Option<ModelParams>,
    /// Second-moment estimate (Adam only).
    second: Option<ModelParams>,
    steps: u64,
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity: None,
            second: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn velocity(&self) -> Option<&ModelParams> {
        self.velocity.as_ref()
    }

    pub fn second_moment(&self) -> Option<&ModelParams> {
        self.second.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Restores the internal state, e.g. from a checkpoint.
    pub fn restore(&mut self, velocity: Option<ModelParams>, second: Option<ModelParams>, steps: u64) {
        self.velocity = velocity;
        self.second = second;
        self.steps = steps;
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let mut g = grads.clone();
        if self.cfg.max_grad_norm > 0.0 {
            let norm = global_norm(&g);
            if norm > self.cfg.max_grad_norm {
                let s = self.cfg.max_grad_norm / norm;
                for t in g.tensors_mut() {
                    t.scale_in_place(s);
                }
            }
        }
        self.steps += 1;
        if self.cfg.kind == OptimizerKind::Adam {
            return self.adam_step(params, &g);
        }
        if self.cfg.momentum == 0.0 {
            return apply_update(params, &g, self.cfg.learning_rate);
        }
        let v = self.velocity.get_or_insert_with(|| zeros_like(params));
        for t in v.tensors_mut() {
            t.scale_in_place(self.cfg.momentum);
        }
        add_scaled(v, &g, 1.0)?;
        apply_update(params, v, self.cfg.learning_rate)
    }
}

impl Optimizer {
    fn adam_step(&mut self, params: &mut ModelParams, g: &ModelParams) -> Result<()> {
        let b1 = if self.cfg.momentum > 0.0 { self.cfg.momentum } else { 0.9 };
        let m = self.velocity.get_or_insert_with(|| zeros_like(params));
        let v = self.second.get_or_insert_with(|| zeros_like(params));
        let t = self.steps as i32;
        let c1 = 1.0 / (1.0 - b1.powi(t));
        let c2 = 1.0 / (1.0 - ADAM_BETA2.powi(t));
        let lr = self.cfg.learning_rate;
        let grads = g.groups();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
            .zip(grads)
        {
            p.expect_same_shape(g)?;
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                p[i] -= lr * (m[i] * c1) / ((v[i] * c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

pub fn global_norm(p: &ModelParams) -> f64 {
    p.groups()
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
