//! Action selection, episodes, and the two-term policy gradient.

mod gradient;
mod model;
mod optim;
mod rollout;

pub use gradient::{
    baseline_of, estimate_baseline, estimate_baseline_with, log_prob_grad, policy_gradient,
    rollout_with_gradients, GradientEstimate, RolloutGradients,
};
pub use model::{ModelConfig, ModelParams, ParamVars, ScoreChaining, PARAM_GROUPS};
pub use optim::{apply_update, global_norm, Optimizer, OptimizerConfig, OptimizerKind};
pub use rollout::{
    regret, rollout, rollout_deterministic, rollout_on_tape, rollout_sampled, select_action,
    ActionGradient, ActionSource, EpisodeGraph, EpisodeNoise, RolloutOptions, Scene, Trajectory,
};
