//! Attention density of one long stochastic rollout.
//!
//! The walk keeps the exploration noise on and skips aggregation; only the
//! attended pixels are recorded.

use std::path::Path;

use image::{ImageBuffer, Luma};
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::glimpse::{encode_where, extract_glimpse_at, initial_observation, low_res_overview, snap_center, ReadCounter};
use crate::gru::{gru_step_values, init_state};
use crate::policy::{select_action, ModelConfig, ModelParams};
use crate::raster::Raster;
use crate::seeding::{stream, Domain};

/// Visit counts per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Counts summed over rows, one entry per column.
    pub fn column_marginal(&self) -> Vec<u64> {
        let mut out = vec![0; self.width];
        for row in self.counts.chunks_exact(self.width) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Counts summed over columns, one entry per row.
    pub fn row_marginal(&self) -> Vec<u64> {
        self.counts.chunks_exact(self.width).map(|r| r.iter().sum()).collect()
    }

    /// Counts divided by the maximum, so the peak is 1.
    pub fn normalized(&self) -> Raster {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        Raster::new(
            self.height,
            self.width,
            self.counts.iter().map(|&c| c as f64 / max).collect(),
        )
        .expect("heatmap shape")
    }

    /// The normalized map quantized to 16 bits.
    pub fn to_u16(&self) -> Vec<u16> {
        self.normalized()
            .data()
            .iter()
            .map(|&v| (v * 65535.0).round() as u16)
            .collect()
    }

    /// Writes the normalized map as a 16-bit grayscale PNG.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_u16())
                .expect("buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Reads a 16-bit grayscale image back as raw samples with its size.
pub fn read_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Runs `steps` glimpses on `image` with exploration noise of standard
/// deviation `beta` and counts the attended pixels.
pub fn attention_heatmap(
    params: &ModelParams,
    model: &ModelConfig,
    image: &Raster,
    steps: usize,
    beta: f64,
    seed: u64,
) -> Result<Heatmap> {
    if steps == 0 {
        return Err(config_err("heatmap needs at least one step"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(config_err(format!("beta must be non-negative, got {beta}")));
    }
    params.check_shapes(model)?;
    let (h, w) = (image.height(), image.width());
    let n1 = model.base();
    let mut rng = stream(seed, Domain::Heatmap, 0, 0);
    let normal = (beta > 0.0).then(|| Normal::new(0.0, beta).expect("finite beta"));
    let mut counter = ReadCounter::default();
    let x0 = initial_observation(&low_res_overview(image, n1)?, model.glimpse.channels());
    let mut state = gru_step_values(&init_state(n1, model.state_channels), &x0, &params.gru)?;
    let mut counts = vec![0u64; h * w];
    for _ in 0..steps {
        let eps = match &normal {
            Some(n) => [n.sample(&mut rng), n.sample(&mut rng)],
            None => [0.0, 0.0],
        };
        let (action, _) = select_action(&state, &params.w_as, eps)?;
        let center = snap_center(action, h, w);
        counts[center.0 as usize * w + center.1 as usize] += 1;
        let raw = extract_glimpse_at(image, center, &model.glimpse, &mut counter);
        let x = encode_where(&raw, action, &params.w_xa)?;
        state = gru_step_values(&state, &x, &params.gru)?;
    }
    Ok(Heatmap {
        height: h,
        width: w,
        counts,
    })
}
