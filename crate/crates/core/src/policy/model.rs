use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationConfig;
use crate::error::{config_err, shape_err, Result};
use crate::glimpse::GlimpseConfig;
use crate::gru::{GruParams, GruVars};
use crate::numeric::{Gradients, Tape, Tensor, Var};

/// How far the score-function gradient is propagated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreChaining {
    /// Through the action mean, `W_as`, and the whole recurrent graph.
    #[default]
    Full,
    /// Only the immediate partial with respect to `W_as`; the state is
    /// treated as a constant.
    Immediate,
}

/// Architecture and episode hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub glimpse: GlimpseConfig,
    pub state_channels: usize,
    pub kernel_size: usize,
    pub aggregation: AggregationConfig,
    /// Exploration standard deviation during training.
    pub beta: f64,
    pub score_chaining: ScoreChaining,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_channels == 0 {
            return Err(config_err("state_channels must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(config_err(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(config_err(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.aggregation.horizon()
    }

    pub fn base(&self) -> usize {
        self.glimpse.base()
    }

    /// Length of the flattened state, `n_1·n_1·C_s`.
    pub fn state_len(&self) -> usize {
        self.base() * self.base() * self.state_channels
    }

    pub fn state_shape(&self) -> [usize; 3] {
        [self.base(), self.base(), self.state_channels]
    }
}

/// Every trainable weight group.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Where-pathway, `[n_1·n_1·c, 2]`.
    pub w_xa: Tensor,
    pub gru: GruParams,
    /// Action mean head, `[2, n_1·n_1·C_s]`.
    pub w_as: Tensor,
    /// Prediction head, `[1, n_1·n_1·C_s]`.
    pub w_ys: Tensor,
}

/// Group names in storage order.
pub const PARAM_GROUPS: [&str; 9] = [
    "w_xa",
    "gru.w_zh",
    "gru.w_zx",
    "gru.w_rh",
    "gru.w_rx",
    "gru.w_sh",
    "gru.w_sx",
    "w_as",
    "w_ys",
];

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let obs = cfg.base() * cfg.base() * cfg.glimpse.channels();
        Self {
            w_xa: Tensor::zeros(&[obs, 2]),
            gru: GruParams::zeros(cfg.kernel_size, cfg.glimpse.channels(), cfg.state_channels),
            w_as: Tensor::zeros(&[2, cfg.state_len()]),
            w_ys: Tensor::zeros(&[1, cfg.state_len()]),
        }
    }

    /// `W_xa` uniform in `[-0.01, 0.01]`; everything else uniform in
    /// `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        p.w_xa
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.01..=0.01));
        p.gru = GruParams::init(cfg.kernel_size, cfg.glimpse.channels(), cfg.state_channels, rng);
        let r = 1.0 / (cfg.state_len() as f64).sqrt();
        for t in [&mut p.w_as, &mut p.w_ys] {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-r..=r));
        }
        p
    }

    pub fn groups(&self) -> [(&'static str, &Tensor); 9] {
        let [zh, zx, rh, rx, sh, sx] = self.gru.tensors();
        [
            (PARAM_GROUPS[0], &self.w_xa),
            (PARAM_GROUPS[1], zh),
            (PARAM_GROUPS[2], zx),
            (PARAM_GROUPS[3], rh),
            (PARAM_GROUPS[4], rx),
            (PARAM_GROUPS[5], sh),
            (PARAM_GROUPS[6], sx),
            (PARAM_GROUPS[7], &self.w_as),
            (PARAM_GROUPS[8], &self.w_ys),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        let [zh, zx, rh, rx, sh, sx] = self.gru.tensors_mut();
        [
            &mut self.w_xa,
            zh,
            zx,
            rh,
            rx,
            sh,
            sx,
            &mut self.w_as,
            &mut self.w_ys,
        ]
    }

    /// Builds parameters from `(name, tensor)` pairs in any order.
    pub fn from_groups(mut groups: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor> {
            let i = groups
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| shape_err(format!("missing parameter group `{name}`")))?;
            Ok(groups.swap_remove(i).1)
        };
        let p = Self {
            w_xa: take("w_xa")?,
            gru: GruParams {
                w_zh: take("gru.w_zh")?,
                w_zx: take("gru.w_zx")?,
                w_rh: take("gru.w_rh")?,
                w_rx: take("gru.w_rx")?,
                w_sh: take("gru.w_sh")?,
                w_sx: take("gru.w_sx")?,
            },
            w_as: take("w_as")?,
            w_ys: take("w_ys")?,
        };
        if let Some((name, _)) = groups.first() {
            return Err(shape_err(format!("unknown parameter group `{name}`")));
        }
        Ok(p)
    }

    /// Checks every group against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        for ((name, have), (_, expect)) in self.groups().iter().zip(want.groups()) {
            if have.shape() != expect.shape() {
                return Err(shape_err(format!(
                    "parameter group `{name}` has shape {:?}, configuration needs {:?}",
                    have.shape(),
                    expect.shape()
                )));
            }
        }
        Ok(())
    }

    /// All values concatenated in group order.
    pub fn flatten(&self) -> Vec<f64> {
        self.groups()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for parameters shaped like `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let total: usize = self.groups().iter().map(|(_, t)| t.numel()).sum();
        if flat.len() != total {
            return Err(shape_err(format!(
                "expected {total} parameter values, got {}",
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for t in out.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn numel(&self) -> usize {
        self.groups().iter().map(|(_, t)| t.numel()).sum()
    }

    /// First group containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.groups()
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| *n)
    }
}

/// Parameters registered as tape leaves.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub w_xa: Var,
    pub gru: GruVars,
    pub w_as: Var,
    pub w_ys: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, p: &ModelParams) -> Self {
        let w_xa = tape.param(p.w_xa.clone());
        let gru = GruVars::register(tape, &p.gru, true);
        let w_as = tape.param(p.w_as.clone());
        let w_ys = tape.param(p.w_ys.clone());
        Self {
            w_xa,
            gru,
            w_as,
            w_ys,
        }
    }

    fn vars(&self) -> [Var; 9] {
        let [zh, zx, rh, rx, sh, sx] = self.gru.vars();
        [self.w_xa, zh, zx, rh, rx, sh, sx, self.w_as, self.w_ys]
    }

    /// Collects per-group gradients, with zeros for groups the loss does
    /// not reach.
    pub fn collect(&self, grads: &Gradients, like: &ModelParams) -> ModelParams {
        let mut out = like.clone();
        for (slot, v) in out.tensors_mut().into_iter().zip(self.vars()) {
            *slot = grads.get_or_zeros(v, slot);
        }
        out
    }
}
