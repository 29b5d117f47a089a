//! `red`: synthesize Stained-MNIST, train and evaluate the recurrent
//! existence model, and export attention heatmaps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use red_core::harness::{
    attention_heatmap, evaluate_checkpoint, load_dataset, load_split, threads_from_env, Checkpoint,
    EvalMode, RunConfig, Task, Trainer,
};
use red_core::stained::idx::read_images;
use red_core::stained::io::{read_gray, DatasetWriter, ImageFormatChoice};
use red_core::stained::{synthesize_each, DigitSource, StainConfig};

#[derive(Parser)]
#[command(name = "red", version, about = "Recurrent existence determination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Png,
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Stained-MNIST image directory with labels.csv
    Synth {
        /// Multiplies every pixel-unit setting (1 = 7168 px images)
        #[arg(long, default_value_t = 0.0625)]
        scale: f64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// MNIST `*-images-idx3-ubyte` file; procedural digits when absent
        #[arg(long)]
        mnist: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        stain_probability: f64,
        #[arg(long, value_enum, default_value_t = Format::Png)]
        format: Format,
    },
    /// Train from a config file, writing checkpoints and metrics.csv
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the episode count from the config
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Accuracy and per-image wall time of a checkpoint
    Eval {
        /// Checkpoint file, or a training output directory
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; defaults to the run's test split
        #[arg(long)]
        data: Option<PathBuf>,
        /// Glimpse at uniformly random locations instead of the policy's
        #[arg(long)]
        random_actions: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention density of one long stochastic rollout, as a 16-bit PNG
    Heatmap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Exploration noise; defaults to the checkpoint's beta
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth {
            scale,
            count,
            out,
            seed,
            mnist,
            stain_probability,
            format,
        } => synth(scale, count, &out, seed, mnist.as_deref(), stain_probability, format),
        Command::Train {
            config,
            out,
            resume,
            episodes,
        } => train(&config, &out, resume.as_deref(), episodes),
        Command::Eval {
            ckpt,
            data,
            random_actions,
            seed,
        } => eval(&ckpt, data.as_deref(), random_actions, seed),
        Command::Heatmap {
            ckpt,
            image,
            steps,
            out,
            beta,
            seed,
        } => heatmap(&ckpt, &image, steps, &out, beta, seed),
    }
}

fn synth(
    scale: f64,
    count: usize,
    out: &Path,
    seed: u64,
    mnist: Option<&Path>,
    stain_probability: f64,
    format: Format,
) -> Result<()> {
    let cfg = StainConfig {
        scale_factor: scale,
        stain_probability,
        ..StainConfig::default()
    };
    cfg.validate()?;
    let source = match mnist {
        Some(p) => DigitSource::Images(read_images(p)?),
        None => DigitSource::Procedural,
    };
    let format = match format {
        Format::Png => ImageFormatChoice::Png,
        Format::Pgm => ImageFormatChoice::Pgm,
    };
    let mut writer = DatasetWriter::create(out, format)?;
    let mut positives = 0;
    let report = synthesize_each(&source, &cfg, count, seed, |s| {
        positives += usize::from(s.sample.label == 1);
        writer.push(&s.sample).map(drop)
    })?;
    writer.finish()?;
    println!(
        "wrote {} images of {px}x{px} to {} ({positives} stained, {} digits skipped)",
        report.produced,
        out.display(),
        report.skipped,
        px = cfg.size(),
    );
    Ok(())
}

fn train(config: &Path, out: &Path, resume: Option<&Path>, episodes: Option<u64>) -> Result<()> {
    let mut trainer = match resume {
        Some(p) => {
            let mut ckpt = Checkpoint::load(&resolve_checkpoint(p))?;
            if let Some(n) = episodes {
                ckpt.config.episodes = n;
            }
            let (train, _) = load_split(&ckpt.config)?;
            Trainer::resume(&ckpt, train)?
        }
        None => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            let (train, _) = load_split(&cfg)?;
            Trainer::new(cfg, train)?
        }
    };
    trainer = trainer.with_threads(threads_from_env())?;
    println!("episode,mean_regret,accuracy,mean_yhat_pos,mean_yhat_neg,eps_per_sec");
    let ckpt = trainer.run(out, |r| {
        println!(
            "{},{:.5},{:.4},{:.4},{:.4},{:.2}",
            r.episode, r.mean_regret, r.accuracy, r.mean_yhat_pos, r.mean_yhat_neg, r.eps_per_sec
        )
    })?;
    println!("finished at episode {}; checkpoint in {}", ckpt.episode, out.display());
    Ok(())
}

/// A directory means its `last.ckpt`; a missing extension is filled in.
fn resolve_checkpoint(p: &Path) -> PathBuf {
    if p.is_dir() {
        return p.join("last.ckpt");
    }
    if !p.exists() && p.extension().is_none() {
        return p.with_extension("ckpt");
    }
    p.to_path_buf()
}

fn eval(ckpt: &Path, data: Option<&Path>, random_actions: bool, seed: u64) -> Result<()> {
    let path = resolve_checkpoint(ckpt);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let set = match data {
        Some(d) => load_dataset(d)?,
        None => {
            let cfg = &ckpt.config;
            if cfg.task == Task::Files && cfg.test_data.as_os_str().is_empty() {
                bail!("the run has no test_data; pass --data");
            }
            load_split(cfg)?.1
        }
    };
    let mode = if random_actions {
        EvalMode::RandomActions { seed }
    } else {
        EvalMode::Policy
    };
    let start = Instant::now();
    let r = evaluate_checkpoint(&ckpt, &set, mode)?;
    println!("images: {}", r.images);
    println!("accuracy: {:.4} ({} correct)", r.accuracy, r.correct);
    println!("mean_yhat_pos: {:.4}", r.mean_yhat_pos);
    println!("mean_yhat_neg: {:.4}", r.mean_yhat_neg);
    println!("mean_seconds_per_image: {:.6}", r.mean_seconds);
    println!("pixel_reads_per_image: {}", r.reads_per_image.first().copied().unwrap_or(0));
    log::info!("evaluation took {:.2?}", start.elapsed());
    Ok(())
}

fn heatmap(ckpt: &Path, image: &Path, steps: usize, out: &Path, beta: Option<f64>, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(&resolve_checkpoint(ckpt))?;
    let model = ckpt.config.model()?;
    let img = read_gray(image)?;
    let h = attention_heatmap(&ckpt.params, &model, &img, steps, beta.unwrap_or(model.beta), seed)?;
    h.write_png(out)?;
    println!(
        "{} steps over {} distinct pixels; wrote {}",
        h.total(),
        h.nonzero_cells(),
        out.display()
    );
    Ok(())
}
