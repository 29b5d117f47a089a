//! Flat `key = value` run configuration (TOML syntax, unknown keys are
//! errors).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::toy::ToyConfig;
use crate::aggregation::AggregationConfig;
use crate::error::{config_err, Result};
use crate::glimpse::GlimpseConfig;
use crate::policy::{ActionSource, ModelConfig, OptimizerConfig, OptimizerKind, ScoreChaining};
use crate::stained::StainConfig;

/// Where training and test images come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// `train_data` / `test_data` paths (IDX pair or image directory).
    #[default]
    Files,
    /// Generated toy images; see the `toy_*` keys.
    Toy,
}

/// Every knob of a run. Defaults are the full-scale settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub glimpse_sizes: Vec<usize>,
    pub state_channels: usize,
    pub kernel_size: usize,
    pub horizon: usize,
    pub k: usize,
    pub gamma: f64,
    pub t0: usize,
    pub beta: f64,
    pub score_chaining: ScoreChaining,
    /// Rollouts per episode, shared by the baseline and the gradient.
    pub rollouts: usize,
    /// `uniform-random` trains with random glimpses (ablation).
    pub train_actions: ActionSource,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_grad_norm: f64,

    pub episodes: u64,
    pub checkpoint_every: u64,
    /// Episodes per metrics row.
    pub log_every: u64,
    /// Write measured episodes/sec; off writes 0 so reruns are
    /// byte-identical.
    pub record_timing: bool,

    pub task: Task,
    pub train_data: PathBuf,
    pub test_data: PathBuf,

    pub toy_size: usize,
    pub toy_square: usize,
    pub toy_noise_max: f64,
    pub toy_distractor: bool,
    pub toy_train_count: usize,
    pub toy_test_count: usize,

    pub target_size: usize,
    pub smooth_kernel: usize,
    pub grad_threshold: f64,
    pub erosion_radius: usize,
    pub stain_count_min: usize,
    pub stain_count_max: usize,
    pub stain_radius: usize,
    pub stain_probability: f64,
    pub scale_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stain = StainConfig::default();
        let toy = ToyConfig::default();
        Self {
            seed: 0,
            glimpse_sizes: vec![18, 36, 54],
            state_channels: 8,
            kernel_size: 3,
            horizon: 350,
            k: 25,
            gamma: 0.95,
            t0: 10,
            beta: 0.15,
            score_chaining: ScoreChaining::Full,
            rollouts: 15,
            train_actions: ActionSource::Policy,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.0,
            max_grad_norm: 0.0,
            episodes: 1000,
            checkpoint_every: 500,
            log_every: 50,
            record_timing: true,
            task: Task::Files,
            train_data: PathBuf::from("data/train"),
            test_data: PathBuf::new(),
            toy_size: toy.size,
            toy_square: toy.square,
            toy_noise_max: toy.noise_max,
            toy_distractor: toy.distractor,
            toy_train_count: 2000,
            toy_test_count: 200,
            target_size: stain.target_size,
            smooth_kernel: stain.smooth_kernel,
            grad_threshold: stain.grad_threshold,
            erosion_radius: stain.erosion_radius,
            stain_count_min: stain.stain_count_range[0],
            stain_count_max: stain.stain_count_range[1],
            stain_radius: stain.stain_radius,
            stain_probability: stain.stain_probability,
            scale_factor: stain.scale_factor,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.optimizer().validate()?;
        if self.rollouts == 0 {
            return Err(config_err("rollouts must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(config_err("log_every must be at least 1"));
        }
        if self.task == Task::Toy {
            self.toy().validate()?;
            if self.toy_train_count == 0 {
                return Err(config_err("toy_train_count must be positive"));
            }
        }
        self.stain().validate()
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            glimpse: GlimpseConfig::new(self.glimpse_sizes.clone())?,
            state_channels: self.state_channels,
            kernel_size: self.kernel_size,
            aggregation: AggregationConfig::new(self.k, self.gamma, self.t0, self.horizon)?,
            beta: self.beta,
            score_chaining: self.score_chaining,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn stain(&self) -> StainConfig {
        StainConfig {
            target_size: self.target_size,
            smooth_kernel: self.smooth_kernel,
            grad_threshold: self.grad_threshold,
            erosion_radius: self.erosion_radius,
            stain_count_range: [self.stain_count_min, self.stain_count_max],
            stain_radius: self.stain_radius,
            stain_probability: self.stain_probability,
            scale_factor: self.scale_factor,
        }
    }

    pub fn toy(&self) -> ToyConfig {
        ToyConfig {
            size: self.toy_size,
            square: self.toy_square,
            noise_max: self.toy_noise_max,
            distractor: self.toy_distractor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_scale_settings() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.glimpse.sizes(), &[18, 36, 54]);
        let a = m.aggregation;
        assert_eq!((a.k(), a.gamma(), a.t0(), a.horizon()), (25, 0.95, 10, 350));
        assert_eq!(c.rollouts, 15);
        assert_eq!(c.stain(), StainConfig::default());
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig {
            task: Task::Toy,
            glimpse_sizes: vec![4, 8],
            beta: 0.3,
            optimizer: OptimizerKind::Adam,
            train_actions: ActionSource::UniformRandom,
            score_chaining: ScoreChaining::Immediate,
            ..Default::default()
        };
        c.test_data = PathBuf::from("somewhere/test");
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml(&text).unwrap().to_toml(), text);
    }

    #[test]
    fn partial_files_take_defaults_and_unknown_keys_fail() {
        let c = RunConfig::from_toml("horizon = 12\nk = 3\nt0 = 2\n").unwrap();
        assert_eq!((c.horizon, c.k, c.rollouts), (12, 3, 15));
        let err = RunConfig::from_toml("horizn = 12\n").unwrap_err().to_string();
        assert!(err.contains("horizn"), "{err}");
        assert!(RunConfig::from_toml("k = 400\n").is_err());
        assert!(RunConfig::from_toml("rollouts = 0\n").is_err());
        assert!(RunConfig::from_toml("glimpse_sizes = [8, 4]\n").is_err());
    }
}
