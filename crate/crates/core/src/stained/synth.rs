//! Per-image synthesis pipeline and its configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filters::{add_stains, central_gradient, gaussian_smooth, thin_writings, upscale_bilinear};
use super::glyphs::procedural_digit;
use super::{LabeledImage, Provenance};
use crate::error::{config_err, synthesis_err, Result};
use crate::raster::Raster;
use crate::seeding::{stream, Domain};

/// Synthesizer settings. Pixel-unit fields hold full-scale values and are
/// multiplied by `scale_factor` when used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainConfig {
    pub target_size: usize,
    pub smooth_kernel: usize,
    /// Minimum gradient per source (28 px) pixel for the high-gradient set.
    pub grad_threshold: f64,
    pub erosion_radius: usize,
    pub stain_count_range: [usize; 2],
    pub stain_radius: usize,
    /// Fraction of images that receive stains (and are labeled 1).
    pub stain_probability: f64,
    pub scale_factor: f64,
}

impl Default for StainConfig {
    fn default() -> Self {
        Self {
            target_size: 7168,
            smooth_kernel: 20,
            grad_threshold: 0.2,
            erosion_radius: 500,
            stain_count_range: [10, 15],
            stain_radius: 12,
            stain_probability: 0.5,
            scale_factor: 1.0,
        }
    }
}

fn scaled(v: usize, s: f64) -> usize {
    ((v as f64 * s).round() as usize).max(1)
}

impl StainConfig {
    /// Full-scale constants at `scale_factor`.
    pub fn at_scale(scale_factor: f64) -> Self {
        Self {
            scale_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(config_err("scale_factor must be positive"));
        }
        for (name, v) in [
            ("target_size", self.target_size),
            ("smooth_kernel", self.smooth_kernel),
            ("erosion_radius", self.erosion_radius),
            ("stain_radius", self.stain_radius),
        ] {
            if v == 0 {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        if self.size() < super::glyphs::GLYPH_SIZE {
            return Err(config_err(format!(
                "scaled target size {} is below the 28 px source",
                self.size()
            )));
        }
        let [lo, hi] = self.stain_count_range;
        if lo == 0 || lo > hi {
            return Err(config_err(format!(
                "stain_count_range must be positive and nondecreasing, got [{lo}, {hi}]"
            )));
        }
        if !(self.grad_threshold > 0.0 && self.grad_threshold.is_finite()) {
            return Err(config_err("grad_threshold must be positive"));
        }
        if !(self.stain_probability > 0.0 && self.stain_probability < 1.0) {
            return Err(config_err("stain_probability must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Output side length.
    pub fn size(&self) -> usize {
        scaled(self.target_size, self.scale_factor)
    }

    pub fn kernel(&self) -> usize {
        scaled(self.smooth_kernel, self.scale_factor)
    }

    pub fn erosion(&self) -> usize {
        scaled(self.erosion_radius, self.scale_factor)
    }

    pub fn radius(&self) -> usize {
        scaled(self.stain_radius, self.scale_factor)
    }

    /// Threshold on the per-output-pixel gradient: the configured
    /// per-source-pixel value times `28 / size`.
    pub fn pixel_threshold(&self) -> f64 {
        self.grad_threshold * super::glyphs::GLYPH_SIZE as f64 / self.size() as f64
    }
}

/// One synthesized image plus what is needed to audit it.
#[derive(Clone, Debug)]
pub struct Synthesized {
    pub sample: LabeledImage,
    /// Stain centers as `(row, col)`; empty for negatives.
    pub centers: Vec<(usize, usize)>,
    /// Gradient magnitude of the thinned image, before stains.
    pub gradient: Raster,
}

/// Digits fed to the synthesizer.
#[derive(Clone, Debug)]
pub enum DigitSource {
    /// Decoded MNIST images, cycled when more are requested.
    Images(Vec<Raster>),
    /// Procedural glyphs for digits `0..10` in turn.
    Procedural,
}

impl DigitSource {
    fn digit(&self, index: usize, seed: u64) -> Result<Raster> {
        match self {
            Self::Images(v) if v.is_empty() => Err(config_err("empty digit source")),
            Self::Images(v) => Ok(v[index % v.len()].clone()),
            Self::Procedural => Ok(procedural_digit(
                (index % 10) as u8,
                &mut stream(seed, Domain::Synth, index as u64, 1),
            )),
        }
    }
}

fn rescale_unit(img: &mut Raster) {
    let (lo, hi) = img.min_max();
    if hi > lo {
        img.map_in_place(|v| (v - lo) / (hi - lo));
    }
}

/// Runs the full pipeline on source digit `index` with its own stream.
pub fn synthesize_one(
    source: &DigitSource,
    cfg: &StainConfig,
    seed: u64,
    index: usize,
) -> Result<Synthesized> {
    let digit = source.digit(index, seed)?;
    let mut rng = stream(seed, Domain::Synth, index as u64, 0);
    let mut img = upscale_bilinear(&digit, cfg.size())?;
    rescale_unit(&mut img);
    let img = gaussian_smooth(&img, cfg.kernel());
    let thr = cfg.pixel_threshold();
    let thinned = thin_writings(&img, thr, cfg.erosion() as f64)?;
    let gradient = central_gradient(&thinned)?;
    let [lo, hi] = cfg.stain_count_range;
    let available = gradient.data().iter().filter(|&&g| g >= thr).count();
    // Checked for both classes so that skipping does not bias the labels.
    if available < hi {
        return Err(synthesis_err(format!(
            "digit {index}: {available} high-gradient pixels after thinning, need {hi}"
        )));
    }
    let (image, centers, label) = if rng.random_bool(cfg.stain_probability) {
        let count = rng.random_range(lo..=hi);
        let (img, centers) = add_stains(&thinned, &gradient, thr, count, cfg.radius(), &mut rng)?;
        (img, centers, 1)
    } else {
        (thinned, Vec::new(), 0)
    };
    Ok(Synthesized {
        sample: LabeledImage {
            image,
            label,
            provenance: Provenance {
                source_index: index,
                seed,
                name: String::new(),
            },
        },
        centers,
        gradient,
    })
}

/// Counts reported by [`synthesize_each`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynthReport {
    pub produced: usize,
    pub skipped: usize,
}

/// Walks source digits in order, skipping (and logging) those whose
/// synthesis fails, until `count` images have been handed to `sink`.
pub fn synthesize_each(
    source: &DigitSource,
    cfg: &StainConfig,
    count: usize,
    seed: u64,
    mut sink: impl FnMut(Synthesized) -> Result<()>,
) -> Result<SynthReport> {
    cfg.validate()?;
    let mut report = SynthReport::default();
    let limit = 10 * count + 100;
    let mut index = 0;
    while report.produced < count {
        if index >= limit {
            return Err(synthesis_err(format!(
                "only {} of {count} images after {limit} source digits",
                report.produced
            )));
        }
        match synthesize_one(source, cfg, seed, index) {
            Ok(s) => {
                sink(s)?;
                report.produced += 1;
            }
            Err(crate::Error::Synthesis(msg)) => {
                log::info!("skipped: {msg}");
                report.skipped += 1;
            }
            Err(e) => return Err(e),
        }
        index += 1;
    }
    Ok(report)
}

/// Collects [`synthesize_each`] into memory.
pub fn synthesize_dataset(
    source: &DigitSource,
    cfg: &StainConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(count);
    synthesize_each(source, cfg, count, seed, |s| {
        out.push(s.sample);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StainConfig {
        // 112 px output, so tests stay fast.
        StainConfig::at_scale(1.0 / 64.0)
    }

    #[test]
    fn paper_constants_at_full_scale() {
        let c = StainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.size(), c.kernel(), c.erosion(), c.radius()), (7168, 20, 500, 12));
        assert_eq!(c.stain_count_range, [10, 15]);
        assert_eq!(c.grad_threshold, 0.2);
    }

    #[test]
    fn desk_scale_rounds_to_nearest_and_clamps() {
        let c = StainConfig::at_scale(1.0 / 16.0);
        assert_eq!((c.size(), c.kernel(), c.erosion(), c.radius()), (448, 1, 31, 1));
        assert!((c.pixel_threshold() - 0.2 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        for c in [
            StainConfig { stain_count_range: [5, 4], ..small() },
            StainConfig { stain_probability: 1.0, ..small() },
            StainConfig { scale_factor: 0.0, ..small() },
            StainConfig { scale_factor: 0.001, ..small() },
            StainConfig { grad_threshold: 0.0, ..small() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn stains_respect_the_recomputed_gradient() {
        let cfg = small();
        let mut positives = 0;
        synthesize_each(&DigitSource::Procedural, &cfg, 30, 5, |s| {
            let img = &s.sample.image;
            assert_eq!((img.height(), img.width()), (112, 112));
            let (lo, hi) = img.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
            assert_eq!(s.sample.label == 1, !s.centers.is_empty());
            if s.sample.label == 1 {
                positives += 1;
                let [a, b] = cfg.stain_count_range;
                assert!((a..=b).contains(&s.centers.len()));
                for &(r, c) in &s.centers {
                    assert!(s.gradient.get(r, c) >= cfg.pixel_threshold());
                    assert_eq!(img.get(r, c), 1.0);
                }
            }
            Ok(())
        })
        .unwrap();
        assert!(positives > 5 && positives < 25, "{positives}");
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let cfg = small();
        let a = synthesize_dataset(&DigitSource::Procedural, &cfg, 6, 9).unwrap();
        let b = synthesize_dataset(&DigitSource::Procedural, &cfg, 6, 9).unwrap();
        let c = synthesize_dataset(&DigitSource::Procedural, &cfg, 6, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn thinning_removes_ink() {
        let cfg = small();
        let s = synthesize_one(&DigitSource::Procedural, &cfg, 1, 0).unwrap();
        let mut up = upscale_bilinear(&procedural_digit(0, &mut stream(1, Domain::Synth, 0, 1)), 112).unwrap();
        rescale_unit(&mut up);
        let before: f64 = up.data().iter().sum();
        let after: f64 = if s.sample.label == 0 {
            s.sample.image.data().iter().sum()
        } else {
            0.0
        };
        assert!(after < before);
    }

    #[test]
    fn empty_image_source_is_an_error() {
        assert!(synthesize_one(&DigitSource::Images(vec![]), &small(), 0, 0).is_err());
        let blank = DigitSource::Images(vec![Raster::filled(28, 28, 0.0)]);
        let err = synthesize_dataset(&blank, &small(), 1, 0).unwrap_err();
        assert!(matches!(err, crate::Error::Synthesis(_)));
    }
}
