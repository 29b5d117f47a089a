use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams, ParamVars, ScoreChaining};
use crate::aggregation::{aggregate_on_tape, temp_predict_on_tape};
use crate::error::{shape_err, Result};
use crate::glimpse::{
    extract_glimpse_at, initial_observation, low_res_overview, snap_center, Action, ReadCounter,
};
use crate::gru::{gru_step, init_state};
use crate::numeric::{Tape, Tensor, Var};
use crate::raster::Raster;

/// An image prepared for episodes: the raster plus its `n_1 × n_1`
/// overview, computed once when the scene is built.
#[derive(Clone, Debug)]
pub struct Scene {
    image: Raster,
    overview: Tensor,
}

impl Scene {
    pub fn new(image: Raster, n1: usize) -> Result<Self> {
        let overview = low_res_overview(&image, n1)?;
        Ok(Self { image, overview })
    }

    pub fn image(&self) -> &Raster {
        &self.image
    }

    pub fn overview(&self) -> &Tensor {
        &self.overview
    }
}

/// Where actions come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSource {
    /// `a_t = clamp(tanh(W_as s_{t-1}) + ε_t)`.
    #[default]
    Policy,
    /// Ablation: `a_t` uniform on `[-1, 1]²`, independent of the state.
    UniformRandom,
}

/// Per-step random draws for one episode: Gaussian exploration noise for
/// [`ActionSource::Policy`], the actions themselves for
/// [`ActionSource::UniformRandom`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeNoise {
    pub source: ActionSource,
    pub values: Vec<[f64; 2]>,
}

impl EpisodeNoise {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        horizon: usize,
        beta: f64,
        source: ActionSource,
    ) -> Self {
        let values = match source {
            ActionSource::Policy if beta > 0.0 => {
                let normal = Normal::new(0.0, beta).expect("beta is finite and positive");
                (0..horizon)
                    .map(|_| [normal.sample(rng), normal.sample(rng)])
                    .collect()
            }
            ActionSource::Policy => vec![[0.0, 0.0]; horizon],
            ActionSource::UniformRandom => (0..horizon)
                .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
                .collect(),
        };
        Self { source, values }
    }

    /// Noise-free policy actions, used for evaluation.
    pub fn deterministic(horizon: usize) -> Self {
        Self {
            source: ActionSource::Policy,
            values: vec![[0.0, 0.0]; horizon],
        }
    }
}

/// How the action enters the differentiated graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActionGradient {
    /// The sampled action is a constant; policy learning goes through the
    /// score function.
    #[default]
    Sampled,
    /// `a = clamp(μ(W) + ε)` stays on the tape, so the regret is
    /// differentiated through the where-pathway into the policy head.
    /// Glimpse contents remain constants.
    Reparameterized,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutOptions {
    pub action_gradient: ActionGradient,
    /// Use these glimpse centers instead of the ones implied by the
    /// actions (gradient-check seam).
    pub frozen_centers: Option<Vec<(isize, isize)>>,
    /// Keep every observation and state in the trajectory.
    pub record_tensors: bool,
}

/// Everything one episode produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `a_1..a_T` after clamping.
    pub actions: Vec<Action>,
    /// `a_1..a_T` before clamping.
    pub raw_actions: Vec<[f64; 2]>,
    /// Action means `μ_1..μ_T`; empty for random actions.
    pub means: Vec<[f64; 2]>,
    /// Glimpse centers in pixel coordinates.
    pub centers: Vec<(isize, isize)>,
    /// `x_0..x_T` when recorded.
    pub observations: Vec<Tensor>,
    /// `s_0..s_T` when recorded; `s_0` is the state after consuming `x_0`.
    pub states: Vec<Tensor>,
    /// `ŷ_1..ŷ_T`.
    pub predictions: Vec<f64>,
    /// Steps chosen by the aggregation layer.
    pub selected: Vec<usize>,
    pub final_prediction: f64,
    pub label: f64,
    pub regret: f64,
    pub reward: f64,
    /// Largest `|s|` over every state of the episode.
    pub max_abs_state: f64,
    pub glimpse_reads: u64,
}

/// Graph handles of an episode recorded on a tape.
#[derive(Debug)]
pub struct EpisodeGraph {
    pub trajectory: Trajectory,
    pub regret: Var,
    pub final_prediction: Var,
    /// One `[2]` node per step; empty for random actions.
    pub means: Vec<Var>,
}

/// `L = (Ŷ − Y)²`.
pub fn regret(final_prediction: f64, label: f64) -> f64 {
    (final_prediction - label).powi(2)
}

/// `μ = tanh(W_as · flatten(s))`, `a = clamp(μ + noise)`.
pub fn select_action(state: &Tensor, w_as: &Tensor, noise: [f64; 2]) -> Result<(Action, [f64; 2])> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    let w = tape.constant(w_as.clone());
    let mu = action_mean(&mut tape, w, s)?;
    let m = mean_pair(&tape, mu);
    let a = Action::new(m[0] + noise[0], m[1] + noise[1]).clamped();
    Ok((a, m))
}

pub(crate) fn action_mean(tape: &mut Tape, w_as: Var, state: Var) -> Result<Var> {
    if tape.value(w_as).shape().first() != Some(&2) {
        return Err(shape_err(format!(
            "action head must be [2, n], got {:?}",
            tape.value(w_as).shape()
        )));
    }
    let pre = tape.matvec(w_as, state)?;
    Ok(tape.tanh(pre))
}

fn mean_pair(tape: &Tape, mu: Var) -> [f64; 2] {
    let d = tape.value(mu).data();
    [d[0], d[1]]
}

/// `x = raw + reshape(tanh(W_xa · a))`.
pub(crate) fn fuse_where(tape: &mut Tape, w_xa: Var, raw: Tensor, action: Var) -> Result<Var> {
    let shape = raw.shape().to_vec();
    let offset = tape.matvec(w_xa, action)?;
    let offset = tape.tanh(offset);
    let offset = tape.reshape(offset, &shape)?;
    let raw = tape.constant(raw);
    tape.add(raw, offset)
}

/// Records a full episode on `tape`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
    noise: &EpisodeNoise,
    opts: &RolloutOptions,
) -> Result<EpisodeGraph> {
    let horizon = cfg.horizon();
    if noise.values.len() != horizon {
        return Err(shape_err(format!(
            "episode noise covers {} steps, horizon is {horizon}",
            noise.values.len()
        )));
    }
    if let Some(frozen) = &opts.frozen_centers {
        if frozen.len() != horizon {
            return Err(shape_err("frozen centers must cover every step"));
        }
    }
    let n1 = cfg.base();
    if scene.overview().shape() != [n1, n1] {
        return Err(shape_err(format!(
            "scene overview is {:?}, model expects {n1}x{n1}",
            scene.overview().shape()
        )));
    }
    let (height, width) = (scene.image().height(), scene.image().width());
    let mut counter = ReadCounter::default();

    let mut traj = Trajectory {
        actions: Vec::with_capacity(horizon),
        raw_actions: Vec::with_capacity(horizon),
        means: Vec::new(),
        centers: Vec::with_capacity(horizon),
        observations: Vec::new(),
        states: Vec::new(),
        predictions: Vec::with_capacity(horizon),
        selected: Vec::new(),
        final_prediction: 0.0,
        label,
        regret: 0.0,
        reward: 0.0,
        max_abs_state: 0.0,
        glimpse_reads: 0,
    };

    let zero = tape.constant(init_state(n1, cfg.state_channels));
    let x0 = initial_observation(scene.overview(), cfg.glimpse.channels());
    if opts.record_tensors {
        traj.observations.push(x0.clone());
    }
    let x0 = tape.constant(x0);
    let mut state = gru_step(tape, zero, x0, &vars.gru)?;
    note_state(tape, state, &mut traj, opts.record_tensors);

    let mut pred_nodes = Vec::with_capacity(horizon);
    let mut mean_nodes = Vec::new();
    for t in 0..horizon {
        let eps = noise.values[t];
        let (raw, action_var) = match noise.source {
            ActionSource::Policy => {
                let policy_input = match cfg.score_chaining {
                    ScoreChaining::Full => state,
                    ScoreChaining::Immediate => tape.detach(state),
                };
                let mu = action_mean(tape, vars.w_as, policy_input)?;
                let m = mean_pair(tape, mu);
                traj.means.push(m);
                mean_nodes.push(mu);
                let raw = [m[0] + eps[0], m[1] + eps[1]];
                let var = match opts.action_gradient {
                    ActionGradient::Sampled => None,
                    ActionGradient::Reparameterized => {
                        let e = tape.constant(Tensor::from_vec(eps.to_vec()));
                        let shifted = tape.add(mu, e)?;
                        Some(tape.clamp(shifted, -1.0, 1.0))
                    }
                };
                (raw, var)
            }
            ActionSource::UniformRandom => (eps, None),
        };
        let action = Action::new(raw[0], raw[1]).clamped();
        let action_var = match action_var {
            Some(v) => v,
            None => tape.constant(Tensor::from_vec(action.to_array().to_vec())),
        };
        let center = match &opts.frozen_centers {
            Some(c) => c[t],
            None => snap_center(action, height, width),
        };
        let glimpse = extract_glimpse_at(scene.image(), center, &cfg.glimpse, &mut counter);
        let x = fuse_where(tape, vars.w_xa, glimpse, action_var)?;
        if opts.record_tensors {
            traj.observations.push(tape.value(x).clone());
        }
        state = gru_step(tape, state, x, &vars.gru)?;
        note_state(tape, state, &mut traj, opts.record_tensors);
        let y = temp_predict_on_tape(tape, state, vars.w_ys)?;
        traj.predictions.push(tape.scalar(y)?);
        pred_nodes.push(y);
        traj.raw_actions.push(raw);
        traj.actions.push(action);
        traj.centers.push(center);
    }

    let (final_prediction, selected) = aggregate_on_tape(tape, &pred_nodes, &cfg.aggregation)?;
    let diff = tape.affine(final_prediction, 1.0, -label);
    let loss = tape.square(diff);
    traj.selected = selected;
    traj.final_prediction = tape.scalar(final_prediction)?;
    traj.regret = tape.scalar(loss)?;
    traj.reward = 1.0 - traj.regret;
    traj.glimpse_reads = counter.reads;

    Ok(EpisodeGraph {
        trajectory: traj,
        regret: loss,
        final_prediction,
        means: mean_nodes,
    })
}

fn note_state(tape: &Tape, state: Var, traj: &mut Trajectory, record: bool) {
    let v = tape.value(state);
    traj.max_abs_state = traj.max_abs_state.max(v.max_abs());
    if record {
        traj.states.push(v.clone());
    }
}

/// Runs one episode without keeping the tape.
pub fn rollout(
    params: &ModelParams,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
    noise: &EpisodeNoise,
    opts: &RolloutOptions,
) -> Result<Trajectory> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    Ok(rollout_on_tape(&mut tape, &vars, cfg, scene, label, noise, opts)?.trajectory)
}

/// Runs one episode with freshly sampled noise at the configured `β`.
pub fn rollout_sampled<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
    source: ActionSource,
    rng: &mut R,
) -> Result<Trajectory> {
    let noise = EpisodeNoise::sample(rng, cfg.horizon(), cfg.beta, source);
    rollout(params, cfg, scene, label, &noise, &RolloutOptions::default())
}

/// Deterministic evaluation episode (`β` treated as 0).
pub fn rollout_deterministic(
    params: &ModelParams,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
) -> Result<Trajectory> {
    let noise = EpisodeNoise::deterministic(cfg.horizon());
    rollout(params, cfg, scene, label, &noise, &RolloutOptions::default())
}
