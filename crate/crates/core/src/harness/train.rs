//! Training loop: per episode, `m` rollouts of one image, a shared
//! baseline, the two-term gradient, and one optimizer step.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::dataset::shuffled_order;
use crate::error::{config_err, Error, Result};
use crate::policy::{
    baseline_of, policy_gradient, rollout_with_gradients, EpisodeNoise, ModelConfig, ModelParams,
    Optimizer, RolloutGradients, RolloutOptions, Scene, Trajectory,
};
use crate::seeding::{stream, Domain};
use crate::stained::LabeledImage;

pub const METRICS_FILE: &str = "metrics.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// One row of `metrics.csv`, summarizing the training rollouts of the
/// preceding `log_every` episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub mean_regret: f64,
    /// Fraction of rollouts whose decision (`Ŷ ≥ 0.5` means present) was right.
    pub accuracy: f64,
    pub mean_yhat_pos: f64,
    pub mean_yhat_neg: f64,
    pub eps_per_sec: f64,
}

/// What one episode produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub image_index: usize,
    pub label: u8,
    /// `Ŷ` of every rollout.
    pub predictions: Vec<f64>,
    pub regrets: Vec<f64>,
    pub baseline: f64,
    /// Every rollout of the episode, without recorded tensors.
    pub trajectories: Vec<Trajectory>,
}

/// Reads `RED_THREADS`; unset, empty or `0` means serial.
pub fn threads_from_env() -> usize {
    std::env::var("RED_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(1)
        .max(1)
}

#[derive(Default)]
struct Interval {
    episodes: u64,
    regret: f64,
    rollouts: usize,
    correct: usize,
    pos: (f64, usize),
    neg: (f64, usize),
}

impl Interval {
    fn add(&mut self, s: &EpisodeStats) {
        self.episodes += 1;
        for (&y, &l) in s.predictions.iter().zip(&s.regrets) {
            self.regret += l;
            self.rollouts += 1;
            if u8::from(y >= 0.5) == s.label {
                self.correct += 1;
            }
            let slot = if s.label == 1 { &mut self.pos } else { &mut self.neg };
            slot.0 += y;
            slot.1 += 1;
        }
    }

    fn row(&self, episode: u64, secs: Option<f64>) -> MetricsRow {
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        MetricsRow {
            episode,
            mean_regret: mean((self.regret, self.rollouts)),
            accuracy: mean((self.correct as f64, self.rollouts)),
            mean_yhat_pos: mean(self.pos),
            mean_yhat_neg: mean(self.neg),
            eps_per_sec: secs.map_or(0.0, |s| self.episodes as f64 / s.max(1e-9)),
        }
    }
}

pub struct Trainer {
    config: RunConfig,
    model: ModelConfig,
    params: ModelParams,
    optimizer: Optimizer,
    episode: u64,
    data: Vec<LabeledImage>,
    order: (u64, Vec<usize>),
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Fresh parameters drawn from the run seed.
    pub fn new(config: RunConfig, data: Vec<LabeledImage>) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        let params = ModelParams::init(&model, &mut stream(config.seed, Domain::Init, 0, 0));
        let optimizer = Optimizer::new(config.optimizer())?;
        Self::assemble(config, model, params, optimizer, 0, data)
    }

    /// Continues from a checkpoint.
    pub fn resume(ckpt: &Checkpoint, data: Vec<LabeledImage>) -> Result<Self> {
        let model = ckpt.config.model()?;
        Self::assemble(
            ckpt.config.clone(),
            model,
            ckpt.params.clone(),
            ckpt.optimizer()?,
            ckpt.episode,
            data,
        )
    }

    fn assemble(
        config: RunConfig,
        model: ModelConfig,
        params: ModelParams,
        optimizer: Optimizer,
        episode: u64,
        data: Vec<LabeledImage>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(config_err("training set is empty"));
        }
        params.check_shapes(&model)?;
        Ok(Self {
            order: (u64::MAX, Vec::new()),
            config,
            model,
            params,
            optimizer,
            episode,
            data,
            pool: None,
        })
    }

    /// Runs rollouts on up to `threads` threads. Results do not depend on
    /// the thread count.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| config_err(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.clone(), self.episode, self.params.clone(), &self.optimizer)
    }

    fn image_for(&mut self, episode: u64) -> usize {
        let n = self.data.len() as u64;
        let pass = episode / n;
        if self.order.0 != pass {
            self.order = (pass, shuffled_order(self.data.len(), self.config.seed, pass));
        }
        self.order.1[(episode % n) as usize]
    }

    fn rollouts(&self, scene: &Scene, label: f64) -> Result<Vec<RolloutGradients>> {
        let (seed, ep) = (self.config.seed, self.episode);
        let horizon = self.model.horizon();
        let one = |j: usize| {
            let noise = EpisodeNoise::sample(
                &mut stream(seed, Domain::Rollout, ep, j as u64),
                horizon,
                self.model.beta,
                self.config.train_actions,
            );
            rollout_with_gradients(
                &self.params,
                &self.model,
                scene,
                label,
                &noise,
                &RolloutOptions::default(),
            )
        };
        let m = self.config.rollouts;
        match &self.pool {
            Some(pool) => pool.install(|| (0..m).into_par_iter().map(one).collect()),
            None => (0..m).map(one).collect(),
        }
    }

    /// One training episode. On a non-finite update the parameters are
    /// left untouched and [`Error::NonFinite`] is returned.
    pub fn step(&mut self) -> Result<EpisodeStats> {
        let index = self.image_for(self.episode);
        let sample = &self.data[index];
        let label = sample.label;
        let scene = Scene::new(sample.image.clone(), self.model.base())?;
        let rs = self.rollouts(&scene, label as f64)?;
        let baseline = baseline_of(&rs)?;
        let est = policy_gradient(&rs, baseline, &self.params)?;
        let mut next = self.params.clone();
        let mut opt = self.optimizer.clone();
        opt.step(&mut next, &est.grads)?;
        if let Some(group) = next.first_non_finite() {
            return Err(Error::NonFinite {
                group: group.to_string(),
                episode: self.episode,
            });
        }
        self.params = next;
        self.optimizer = opt;
        self.episode += 1;
        Ok(EpisodeStats {
            image_index: index,
            label,
            predictions: rs.iter().map(|r| r.trajectory.final_prediction).collect(),
            regrets: rs.iter().map(|r| r.trajectory.regret).collect(),
            baseline,
            trajectories: rs.into_iter().map(|r| r.trajectory).collect(),
        })
    }

    /// Trains until `config.episodes`, writing `metrics.csv`, periodic
    /// `episode-N.ckpt` files and `last.ckpt` into `out_dir`. On divergence
    /// `last.ckpt` holds the last finite parameters.
    pub fn run(&mut self, out_dir: &Path, mut on_row: impl FnMut(&MetricsRow)) -> Result<Checkpoint> {
        fs::create_dir_all(out_dir)?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let fresh = self.episode == 0 || !metrics_path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&metrics_path)?;
        let mut csv = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));

        let mut interval = Interval::default();
        let mut clock = Instant::now();
        while self.episode < self.config.episodes {
            let stats = match self.step() {
                Ok(s) => s,
                Err(e @ Error::NonFinite { .. }) => {
                    log::error!("{e}; saving the last finite parameters");
                    self.checkpoint().save(&out_dir.join(LAST_CHECKPOINT))?;
                    csv.flush()?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            interval.add(&stats);
            let ep = self.episode;
            if ep.is_multiple_of(self.config.log_every) || ep == self.config.episodes {
                let secs = self.config.record_timing.then(|| clock.elapsed().as_secs_f64());
                let row = interval.row(ep, secs);
                csv.serialize(&row).map_err(csv_err)?;
                csv.flush()?;
                on_row(&row);
                interval = Interval::default();
                clock = Instant::now();
            }
            if self.config.checkpoint_every > 0 && ep.is_multiple_of(self.config.checkpoint_every) {
                let ckpt = self.checkpoint();
                ckpt.save(&checkpoint_path(out_dir, ep))?;
                ckpt.save(&out_dir.join(LAST_CHECKPOINT))?;
            }
        }
        csv.flush()?;
        let ckpt = self.checkpoint();
        ckpt.save(&out_dir.join(LAST_CHECKPOINT))?;
        Ok(ckpt)
    }
}

pub fn checkpoint_path(out_dir: &Path, episode: u64) -> PathBuf {
    out_dir.join(format!("episode-{episode}.ckpt"))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Task;
    use crate::harness::toy::toy_dataset;

    fn tiny() -> RunConfig {
        RunConfig {
            task: Task::Toy,
            glimpse_sizes: vec![4, 8],
            state_channels: 2,
            horizon: 4,
            k: 2,
            t0: 1,
            rollouts: 3,
            beta: 0.2,
            toy_size: 24,
            toy_square: 4,
            episodes: 12,
            log_every: 5,
            checkpoint_every: 6,
            record_timing: false,
            seed: 11,
            ..Default::default()
        }
    }

    fn data(cfg: &RunConfig) -> Vec<LabeledImage> {
        toy_dataset(&cfg.toy(), 10, cfg.seed).unwrap()
    }

    #[test]
    fn zero_episodes_returns_the_initialization() {
        let cfg = RunConfig { episodes: 0, ..tiny() };
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg.clone(), data(&cfg)).unwrap();
        let init = t.params().clone();
        let ckpt = t.run(dir.path(), |_| {}).unwrap();
        assert_eq!(ckpt.params, init);
        assert_eq!(Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap(), ckpt);
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), 0);
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        let ckpt = Trainer::new(cfg.clone(), data(&cfg))
            .unwrap()
            .run(dir.path(), |r| rows.push(r.clone()))
            .unwrap();
        assert_eq!(ckpt.episode, 12);
        let read = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(read, rows);
        assert_eq!(read.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![5, 10, 12]);
        for r in &read {
            assert!((0.0..=1.0).contains(&r.accuracy) && r.eps_per_sec == 0.0);
        }
        let header = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(header.starts_with("episode,mean_regret,accuracy,mean_yhat_pos,mean_yhat_neg,eps_per_sec\n"));
        for ep in [6, 12] {
            assert_eq!(Checkpoint::load(&checkpoint_path(dir.path(), ep)).unwrap().episode, ep);
        }
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let cfg = tiny();
        let full = tempfile::tempdir().unwrap();
        let a = Trainer::new(cfg.clone(), data(&cfg)).unwrap().run(full.path(), |_| {}).unwrap();
        let half = tempfile::tempdir().unwrap();
        let mid = Checkpoint::load(&checkpoint_path(full.path(), 6)).unwrap();
        let b = Trainer::resume(&mid, data(&cfg)).unwrap().run(half.path(), |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = RunConfig { episodes: 4, ..tiny() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = Trainer::new(cfg.clone(), data(&cfg)).unwrap().run(d1.path(), |_| {}).unwrap();
        let b = Trainer::new(cfg.clone(), data(&cfg))
            .unwrap()
            .with_threads(3)
            .unwrap()
            .run(d2.path(), |_| {})
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_stops_with_the_last_finite_parameters() {
        let cfg = tiny();
        let mut d = data(&cfg);
        // A corrupt pixel poisons every gradient it touches.
        for s in &mut d {
            s.image.data_mut().fill(f64::NAN);
        }
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg.clone(), d).unwrap();
        let err = t.run(dir.path(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        let saved = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
        assert!(saved.params.first_non_finite().is_none());
        assert_eq!(&saved.params, t.params());
    }
}
