//! Deterministic evaluation (`β` treated as 0) and the random-attention
//! ablation.

use std::time::Instant;

use super::checkpoint::Checkpoint;
use crate::error::{config_err, Result};
use crate::policy::{rollout, ActionSource, EpisodeNoise, ModelConfig, ModelParams, RolloutOptions, Scene};
use crate::seeding::{stream, Domain};
use crate::stained::LabeledImage;

/// Decision rule: `Ŷ ≥ 0.5` means the pattern is present (ties count as
/// present).
pub fn decide(yhat: f64) -> u8 {
    u8::from(yhat >= 0.5)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalMode {
    /// Noise-free policy actions.
    #[default]
    Policy,
    /// Uniformly random glimpse locations, seeded per image.
    RandomActions { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_yhat_pos: f64,
    pub mean_yhat_neg: f64,
    /// Mean wall time of one evaluation episode.
    pub mean_seconds: f64,
    /// Pixels read by glimpses in each episode.
    pub reads_per_image: Vec<u64>,
    pub predictions: Vec<f64>,
}

pub fn evaluate(
    params: &ModelParams,
    model: &ModelConfig,
    data: &[LabeledImage],
    mode: EvalMode,
) -> Result<EvalReport> {
    params.check_shapes(model)?;
    if data.is_empty() {
        return Err(config_err("evaluation set is empty"));
    }
    let horizon = model.horizon();
    let mut report = EvalReport {
        images: data.len(),
        correct: 0,
        accuracy: 0.0,
        mean_yhat_pos: f64::NAN,
        mean_yhat_neg: f64::NAN,
        mean_seconds: 0.0,
        reads_per_image: Vec::with_capacity(data.len()),
        predictions: Vec::with_capacity(data.len()),
    };
    let (mut pos, mut neg) = ((0.0, 0usize), (0.0, 0usize));
    let mut total = 0.0;
    for (i, sample) in data.iter().enumerate() {
        let noise = match mode {
            EvalMode::Policy => EpisodeNoise::deterministic(horizon),
            EvalMode::RandomActions { seed } => EpisodeNoise::sample(
                &mut stream(seed, Domain::Eval, i as u64, 0),
                horizon,
                0.0,
                ActionSource::UniformRandom,
            ),
        };
        let start = Instant::now();
        let scene = Scene::new(sample.image.clone(), model.base())?;
        let tr = rollout(params, model, &scene, sample.label as f64, &noise, &RolloutOptions::default())?;
        total += start.elapsed().as_secs_f64();
        let y = tr.final_prediction;
        if decide(y) == sample.label {
            report.correct += 1;
        }
        let slot = if sample.label == 1 { &mut pos } else { &mut neg };
        slot.0 += y;
        slot.1 += 1;
        report.reads_per_image.push(tr.glimpse_reads);
        report.predictions.push(y);
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    report.accuracy = report.correct as f64 / data.len() as f64;
    report.mean_yhat_pos = mean(pos);
    report.mean_yhat_neg = mean(neg);
    report.mean_seconds = total / data.len() as f64;
    Ok(report)
}

/// Evaluates a checkpoint with the model configuration it was saved with.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &[LabeledImage], mode: EvalMode) -> Result<EvalReport> {
    evaluate(&ckpt.params, &ckpt.config.model()?, data, mode)
}
