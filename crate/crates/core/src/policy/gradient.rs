use rand::Rng;

use super::model::{ModelConfig, ModelParams, ParamVars};
use super::rollout::{
    rollout, rollout_on_tape, ActionSource, EpisodeNoise, RolloutOptions, Scene, Trajectory,
};
use crate::error::{config_err, shape_err, Result};
use crate::numeric::{Tape, Tensor};

/// `∂ log N(a; μ, β²I) / ∂μ = (a − μ)/β²`, with `a` the unclamped sample.
pub fn log_prob_grad(a: [f64; 2], mean: [f64; 2], beta: f64) -> Result<[f64; 2]> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(config_err(format!("exploration beta must be positive, got {beta}")));
    }
    let inv = 1.0 / (beta * beta);
    Ok([(a[0] - mean[0]) * inv, (a[1] - mean[1]) * inv])
}

/// Gradients of one rollout, kept apart so the baseline can be applied
/// once every rollout of the episode is known.
#[derive(Clone, Debug)]
pub struct RolloutGradients {
    pub trajectory: Trajectory,
    /// `∇_W L` with every sampled action held fixed, i.e. `2(Ŷ−Y)∇_W Ŷ`.
    pub pathwise: ModelParams,
    /// `Σ_t ∇_W log P(a_t | W)`; `None` for random actions and for a
    /// deterministic policy (`β = 0`), where it is undefined.
    pub score: Option<ModelParams>,
}

/// Runs one episode and differentiates it twice: once for the regret, once
/// for the summed action log-likelihood.
pub fn rollout_with_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
    noise: &EpisodeNoise,
    opts: &RolloutOptions,
) -> Result<RolloutGradients> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let graph = rollout_on_tape(&mut tape, &vars, cfg, scene, label, noise, opts)?;
    let pathwise = vars.collect(&tape.backward(graph.regret)?, params);

    let score = match noise.source {
        ActionSource::UniformRandom => None,
        ActionSource::Policy if cfg.beta == 0.0 => None,
        ActionSource::Policy => {
            let traj = &graph.trajectory;
            let mut terms = Vec::with_capacity(graph.means.len());
            for ((&mu, m), raw) in graph.means.iter().zip(&traj.means).zip(&traj.raw_actions) {
                let g = log_prob_grad(*raw, *m, cfg.beta)?;
                let c = tape.constant(Tensor::from_vec(g.to_vec()));
                terms.push(tape.dot(mu, c)?);
            }
            let stacked = tape.stack(&terms);
            let total = tape.sum(stacked);
            Some(vars.collect(&tape.backward(total)?, params))
        }
    };
    Ok(RolloutGradients {
        trajectory: graph.trajectory,
        pathwise,
        score,
    })
}

/// Averaged gradient for one episode plus diagnostics.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grads: ModelParams,
    pub mean_regret: f64,
    pub baseline: f64,
    pub rollouts: usize,
}

/// `mean_j [ (L_j − b)·Σ_t ∇log P(a_t) + 2(Ŷ_j − Y)∇Ŷ_j ]`.
pub fn policy_gradient(
    rollouts: &[RolloutGradients],
    baseline: f64,
    params: &ModelParams,
) -> Result<GradientEstimate> {
    if rollouts.is_empty() {
        return Err(shape_err("policy gradient needs at least one rollout"));
    }
    let mut acc = zeros_like(params);
    let scale = 1.0 / rollouts.len() as f64;
    let mut regret_sum = 0.0;
    for r in rollouts {
        add_scaled(&mut acc, &r.pathwise, scale)?;
        if let Some(score) = &r.score {
            add_scaled(&mut acc, score, (r.trajectory.regret - baseline) * scale)?;
        }
        regret_sum += r.trajectory.regret;
    }
    Ok(GradientEstimate {
        grads: acc,
        mean_regret: regret_sum * scale,
        baseline,
        rollouts: rollouts.len(),
    })
}

/// Mean of `m` sampled regrets. The sampler is any closure producing one
/// rollout's regret, so the estimator can be tested against stub policies.
pub fn estimate_baseline_with<R, F>(m: usize, rng: &mut R, mut sample: F) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<f64>,
{
    if m == 0 {
        return Err(config_err("baseline needs at least one rollout"));
    }
    let mut sum = 0.0;
    for _ in 0..m {
        sum += sample(rng)?;
    }
    Ok(sum / m as f64)
}

/// `b = mean over m rollouts of (Ŷ − Y)²` for one image.
pub fn estimate_baseline<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    scene: &Scene,
    label: f64,
    m: usize,
    source: ActionSource,
    rng: &mut R,
) -> Result<f64> {
    estimate_baseline_with(m, rng, |rng| {
        let noise = EpisodeNoise::sample(rng, cfg.horizon(), cfg.beta, source);
        Ok(rollout(params, cfg, scene, label, &noise, &RolloutOptions::default())?.regret)
    })
}

/// Mean regret of already completed rollouts; this is how training reuses
/// the gradient rollouts as the baseline sample.
pub fn baseline_of(rollouts: &[RolloutGradients]) -> Result<f64> {
    if rollouts.is_empty() {
        return Err(config_err("baseline needs at least one rollout"));
    }
    Ok(rollouts.iter().map(|r| r.trajectory.regret).sum::<f64>() / rollouts.len() as f64)
}

pub(crate) fn zeros_like(params: &ModelParams) -> ModelParams {
    let mut z = params.clone();
    for t in z.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    z
}

pub(crate) fn add_scaled(acc: &mut ModelParams, g: &ModelParams, alpha: f64) -> Result<()> {
    let src = g.groups();
    for (dst, (_, s)) in acc.tensors_mut().into_iter().zip(src) {
        dst.axpy(alpha, s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::AggregationConfig;
    use crate::glimpse::GlimpseConfig;
    use crate::numeric::{central_differences, relative_error};
    use crate::policy::model::ScoreChaining;
    use crate::policy::rollout::ActionGradient;
    use crate::raster::Raster;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn tiny(beta: f64) -> ModelConfig {
        ModelConfig {
            glimpse: GlimpseConfig::new(vec![4, 8]).unwrap(),
            state_channels: 2,
            kernel_size: 3,
            aggregation: AggregationConfig::new(2, 0.5, 1, 4).unwrap(),
            beta,
            score_chaining: ScoreChaining::Full,
        }
    }

    fn scene() -> Scene {
        let img = Raster::from_fn(16, 16, |r, c| ((r * 5 + c * 3) % 7) as f64 / 6.0);
        Scene::new(img, 4).unwrap()
    }

    fn log_density(a: [f64; 2], mu: [f64; 2], beta: f64) -> f64 {
        let d = Normal::new(0.0, beta).unwrap();
        use statrs::distribution::Continuous;
        d.ln_pdf(a[0] - mu[0]) + d.ln_pdf(a[1] - mu[1])
    }

    #[test]
    fn log_prob_grad_examples() {
        assert_eq!(log_prob_grad([0.3, -0.2], [0.3, -0.2], 0.1).unwrap(), [0.0, 0.0]);
        let g = log_prob_grad([0.45, 0.0], [0.2, 0.0], 0.25).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-12 && g[1] == 0.0);
        assert!(log_prob_grad([0.0; 2], [0.0; 2], 0.0).is_err());
        assert!(log_prob_grad([0.0; 2], [0.0; 2], -1.0).is_err());
    }

    #[test]
    fn log_prob_grad_matches_density_differences() {
        let a = [0.37, -0.81];
        let beta = 0.3;
        let mut f = |mu: &[f64]| log_density(a, [mu[0], mu[1]], beta);
        let mu = [0.1, -0.5];
        let numeric = central_differences(&mut f, &mu, 1e-5);
        let g = log_prob_grad(a, mu, beta).unwrap();
        for i in 0..2 {
            assert!((g[i] - numeric[i]).abs() < 1e-6, "{g:?} vs {numeric:?}");
        }
    }

    #[test]
    fn pathwise_term_vanishes_at_the_label() {
        let cfg = tiny(0.2);
        let params = ModelParams::zeros(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = EpisodeNoise::sample(&mut rng, 4, cfg.beta, ActionSource::Policy);
        // zero weights give Ŷ = 0.5 exactly
        let r = rollout_with_gradients(&params, &cfg, &scene(), 0.5, &noise, &RolloutOptions::default()).unwrap();
        assert_eq!(r.trajectory.final_prediction, 0.5);
        assert!(r.pathwise.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_advantage_removes_score_term() {
        let cfg = tiny(0.2);
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = EpisodeNoise::sample(&mut rng, 4, cfg.beta, ActionSource::Policy);
        let r = rollout_with_gradients(&params, &cfg, &scene(), 1.0, &noise, &RolloutOptions::default()).unwrap();
        assert!(r.score.as_ref().unwrap().flatten().iter().any(|&v| v != 0.0));
        let b = r.trajectory.regret;
        let est = policy_gradient(std::slice::from_ref(&r), b, &params).unwrap();
        assert_eq!(est.grads.flatten(), r.pathwise.flatten());
        assert_eq!(est.mean_regret, b);
    }

    #[test]
    fn random_actions_have_no_score() {
        let cfg = tiny(0.2);
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = EpisodeNoise::sample(&mut rng, 4, cfg.beta, ActionSource::UniformRandom);
        let r = rollout_with_gradients(&params, &cfg, &scene(), 1.0, &noise, &RolloutOptions::default()).unwrap();
        assert!(r.score.is_none());
        // the action head is unreachable without a policy
        assert!(r.pathwise.w_as.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_baseline_equals_single_regret() {
        let cfg = tiny(0.0);
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = estimate_baseline(&params, &cfg, &scene(), 1.0, 1, ActionSource::Policy, &mut rng).unwrap();
        let many = estimate_baseline(&params, &cfg, &scene(), 1.0, 15, ActionSource::Policy, &mut rng).unwrap();
        assert!((one - many).abs() <= 1e-15 * one, "{one} vs {many}");
        assert!(estimate_baseline(&params, &cfg, &scene(), 1.0, 0, ActionSource::Policy, &mut rng).is_err());
    }

    // Stub policy: one Gaussian action a ~ N(μ, β²); regret 1 when a > 0,
    // else 0. The expected regret is P(a > 0) = Φ(μ/β).
    const STUB_MU: f64 = 0.3;
    const STUB_BETA: f64 = 0.5;

    fn stub_expectation() -> f64 {
        Normal::new(0.0, 1.0).unwrap().cdf(STUB_MU / STUB_BETA)
    }

    fn stub_sample(rng: &mut ChaCha8Rng) -> (f64, f64) {
        use rand_distr::Distribution;
        let a = rand_distr::Normal::new(STUB_MU, STUB_BETA).unwrap().sample(rng);
        (a, if a > 0.0 { 1.0 } else { 0.0 })
    }

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn baseline_estimate_matches_stub_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let b = estimate_baseline_with(n, &mut rng, |rng| Ok(stub_sample(rng).1)).unwrap();
        let p = stub_expectation();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((b - p).abs() < 3.0 * se, "b = {b}, exact = {p}, se = {se}");
    }

    #[test]
    fn baseline_keeps_score_mean_and_cuts_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = stub_expectation();
        let n = 50_000;
        let (mut plain, mut centered) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (a, l) = stub_sample(&mut rng);
            let g = log_prob_grad([a, 0.0], [STUB_MU, 0.0], STUB_BETA).unwrap()[0];
            plain.push(l * g);
            centered.push((l - b) * g);
        }
        let (m0, v0) = mean_and_var(&plain);
        let (m1, v1) = mean_and_var(&centered);
        let se = (v0 / n as f64 + v1 / n as f64).sqrt();
        assert!((m0 - m1).abs() < 3.0 * se, "{m0} vs {m1}, se {se}");
        assert!(v1 <= v0, "{v1} > {v0}");
        // both estimate d/dμ Φ(μ/β) = φ(μ/β)/β
        let exact = (-(STUB_MU / STUB_BETA).powi(2) / 2.0).exp()
            / (2.0 * std::f64::consts::PI).sqrt()
            / STUB_BETA;
        assert!((m1 - exact).abs() < 3.0 * (v1 / n as f64).sqrt());
    }

    #[test]
    fn pathwise_gradient_matches_differences_with_frozen_crops() {
        let cfg = tiny(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ModelParams::init(&cfg, &mut rng);
        params.w_xa.data_mut().iter_mut().for_each(|v| *v *= 30.0);
        let sc = scene();
        let noise = EpisodeNoise::deterministic(4);
        let base = rollout(&params, &cfg, &sc, 1.0, &noise, &RolloutOptions::default()).unwrap();
        let opts = RolloutOptions {
            action_gradient: ActionGradient::Reparameterized,
            frozen_centers: Some(base.centers.clone()),
            record_tensors: false,
        };
        let analytic = rollout_with_gradients(&params, &cfg, &sc, 1.0, &noise, &opts)
            .unwrap()
            .pathwise
            .flatten();
        let mut f = |flat: &[f64]| {
            let p = params.with_flat(flat).unwrap();
            rollout(&p, &cfg, &sc, 1.0, &noise, &opts).unwrap().regret
        };
        let numeric = central_differences(&mut f, &params.flatten(), 1e-5);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
