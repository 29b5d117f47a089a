//! Separable toy existence task.
//!
//! Every image is uniform noise with exactly one bright object at a random
//! position. Positive images carry a solid square; negative images carry a
//! hollow square (a ring) with the same number of bright pixels. Pooled
//! down to the overview both look like the same bright smudge, so the
//! overview says where to look but not what is there: deciding requires a
//! fine glimpse on the object.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::raster::Raster;
use crate::seeding::{stream, Domain};
use crate::stained::{LabeledImage, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub size: usize,
    /// Side of the solid square.
    pub square: usize,
    /// Background noise is uniform on `[0, noise_max]`.
    pub noise_max: f64,
    /// Plant the ring in negative images; without it the overview alone
    /// separates the classes.
    pub distractor: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 112,
            square: 8,
            noise_max: 0.5,
            distractor: true,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.square == 0 || !self.square.is_multiple_of(2) {
            return Err(config_err("toy square side must be positive and even"));
        }
        if self.size < self.ring_side() + 2 {
            return Err(config_err("toy image too small for its objects"));
        }
        if !(0.0..=1.0).contains(&self.noise_max) {
            return Err(config_err("toy noise_max must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Outer side of the ring: the square grown by one pixel per side, with
    /// a hollow of `square - 2` so that both objects have `square²` pixels.
    fn ring_side(&self) -> usize {
        self.square + 2
    }
}

/// Draws one image with the given label.
pub fn toy_image<R: Rng + ?Sized>(cfg: &ToyConfig, label: u8, rng: &mut R) -> Raster {
    toy_sample(cfg, label, rng).0
}

/// Like [`toy_image`], also returning the object's center in pixel
/// coordinates (`None` when no object was planted).
pub fn toy_sample<R: Rng + ?Sized>(
    cfg: &ToyConfig,
    label: u8,
    rng: &mut R,
) -> (Raster, Option<(f64, f64)>) {
    let n = cfg.size;
    let mut center = None;
    let mut img = Raster::from_fn(n, n, |_, _| rng.random_range(0.0..=cfg.noise_max));
    if label == 1 {
        let s = cfg.square;
        let (r0, c0) = (rng.random_range(0..=n - s), rng.random_range(0..=n - s));
        center = Some((r0 as f64 + (s as f64 - 1.0) / 2.0, c0 as f64 + (s as f64 - 1.0) / 2.0));
        for r in r0..r0 + s {
            for c in c0..c0 + s {
                img.set(r, c, 1.0);
            }
        }
    } else if cfg.distractor {
        let s = cfg.ring_side();
        let (r0, c0) = (rng.random_range(0..=n - s), rng.random_range(0..=n - s));
        center = Some((r0 as f64 + (s as f64 - 1.0) / 2.0, c0 as f64 + (s as f64 - 1.0) / 2.0));
        // hollow of side square - 2 leaves s² - (square-2)² = square² pixels
        let inner = (s - (cfg.square - 2)) / 2;
        for r in 0..s {
            for c in 0..s {
                let hollow = (inner..s - inner).contains(&r) && (inner..s - inner).contains(&c);
                if !hollow {
                    img.set(r0 + r, c0 + c, 1.0);
                }
            }
        }
    }
    (img, center)
}

/// `n` images, exactly balanced (`n/2` positives, rounded down), in a
/// seed-determined order.
pub fn toy_dataset(cfg: &ToyConfig, n: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    cfg.validate()?;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut stream(seed, Domain::Toy, u64::MAX, 0));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = stream(seed, Domain::Toy, i as u64, 0);
            LabeledImage {
                image: toy_image(cfg, label, &mut rng),
                label,
                provenance: Provenance {
                    source_index: i,
                    seed,
                    name: format!("toy_{i:05}"),
                },
            }
        })
        .collect())
}
