//! Hard-attention retina.
//!
//! A glimpse at action `a` reads `c` concentric square patches of side
//! `n_1 < n_2 < … < n_c` around the attended pixel and average-pools each
//! down to `n_1 × n_1`. The number of pixels read per glimpse is
//! `Σ n_i²` whatever the image size.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::numeric::Tensor;
use crate::raster::Raster;

/// Patch sizes of the retina, innermost first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlimpseConfig {
    sizes: Vec<usize>,
}

impl GlimpseConfig {
    /// Validates the sizes. A size that is not a multiple of `n_1` is
    /// rounded up to the next multiple (with a warning) so that pooling
    /// windows tile the patch exactly.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        let Some(&n1) = sizes.first() else {
            return Err(config_err("glimpse needs at least one channel"));
        };
        if n1 == 0 {
            return Err(config_err("n_1 must be at least 1"));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err(format!(
                "glimpse sizes must be strictly increasing, got {sizes:?}"
            )));
        }
        let effective: Vec<usize> = sizes
            .iter()
            .map(|&n| {
                let m = n.div_ceil(n1) * n1;
                if m != n {
                    log::warn!("glimpse size {n} is not a multiple of {n1}; extracting {m}");
                }
                m
            })
            .collect();
        Ok(Self { sizes: effective })
    }

    /// Channel count `c`.
    pub fn channels(&self) -> usize {
        self.sizes.len()
    }

    /// Output side length `n_1`.
    pub fn base(&self) -> usize {
        self.sizes[0]
    }

    /// Patch side lengths actually extracted.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Pixels read by one glimpse, `Σ n_i²`.
    pub fn reads_per_glimpse(&self) -> u64 {
        self.sizes.iter().map(|&n| (n * n) as u64).sum()
    }

    /// Shape of one observation, `[n_1, n_1, c]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        [self.base(), self.base(), self.channels()]
    }
}

/// Attended location in normalized coordinates: `(-1, -1)` is the
/// bottom-left corner of the image and `(1, 1)` the top-right.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub x: f64,
    pub y: f64,
}

impl Action {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(-1.0, 1.0),
            y: self.y.clamp(-1.0, 1.0),
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Counts pixel positions visited by the sensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadCounter {
    pub reads: u64,
}

/// Maps an action onto raster coordinates with the origin at the top-left
/// pixel center. The action is clamped to `[-1, 1]²` first.
pub fn to_pixel(a: Action, height: usize, width: usize) -> (f64, f64) {
    let a = a.clamped();
    let row = (1.0 - a.y) / 2.0 * (height as f64 - 1.0);
    let col = (a.x + 1.0) / 2.0 * (width as f64 - 1.0);
    (row, col)
}

/// Nearest pixel to the attended location.
pub fn snap_center(a: Action, height: usize, width: usize) -> (isize, isize) {
    let (r, c) = to_pixel(a, height, width);
    (r.round() as isize, c.round() as isize)
}

/// Extracts the raw (pre-fusion) glimpse at action `a`.
pub fn extract_glimpse(
    image: &Raster,
    a: Action,
    cfg: &GlimpseConfig,
    counter: &mut ReadCounter,
) -> Tensor {
    let center = snap_center(a, image.height(), image.width());
    extract_glimpse_at(image, center, cfg, counter)
}

/// Extracts the glimpse around an explicit pixel center.
///
/// A patch of side `s` covers rows `r - s/2 .. r - s/2 + s` (and likewise
/// for columns); positions outside the image read as zero.
pub fn extract_glimpse_at(
    image: &Raster,
    center: (isize, isize),
    cfg: &GlimpseConfig,
    counter: &mut ReadCounter,
) -> Tensor {
    let n1 = cfg.base();
    let c = cfg.channels();
    let mut out = vec![0.0; n1 * n1 * c];
    for (ch, &size) in cfg.sizes().iter().enumerate() {
        let factor = size / n1;
        let top = center.0 - (size / 2) as isize;
        let left = center.1 - (size / 2) as isize;
        let norm = 1.0 / (factor * factor) as f64;
        for i in 0..n1 {
            for j in 0..n1 {
                let mut acc = 0.0;
                for di in 0..factor {
                    let r = top + (i * factor + di) as isize;
                    for dj in 0..factor {
                        acc += image.get_or_zero(r, left + (j * factor + dj) as isize);
                    }
                }
                out[(i * n1 + j) * c + ch] = acc * norm;
            }
        }
        counter.reads += (size * size) as u64;
    }
    Tensor::new(vec![n1, n1, c], out).expect("glimpse shape")
}

/// What/where fusion: `raw + tanh(W_xa · a)` with `W_xa` of shape
/// `[n_1·n_1·c, 2]`, applied to every channel.
pub fn encode_where(raw: &Tensor, a: Action, w_xa: &Tensor) -> Result<Tensor> {
    if w_xa.shape() != [raw.numel(), 2] {
        return Err(shape_err(format!(
            "W_xa must be [{}, 2], got {:?}",
            raw.numel(),
            w_xa.shape()
        )));
    }
    let offsets = w_xa
        .data()
        .chunks_exact(2)
        .map(|row| (row[0] * a.x + row[1] * a.y).tanh());
    let data = raw.data().iter().zip(offsets).map(|(v, o)| v + o).collect();
    Tensor::new(raw.shape().to_vec(), data)
}

/// Whole-image thumbnail of side `n1` by area averaging. Bin `i` covers
/// rows `⌊i·H/n1⌋ .. ⌊(i+1)·H/n1⌋`, and likewise for columns.
pub fn low_res_overview(image: &Raster, n1: usize) -> Result<Tensor> {
    let (h, w) = (image.height(), image.width());
    if n1 == 0 || h < n1 || w < n1 {
        return Err(shape_err(format!(
            "cannot pool a {h}x{w} image down to {n1}x{n1}"
        )));
    }
    let mut out = Vec::with_capacity(n1 * n1);
    for i in 0..n1 {
        let (r0, r1) = (i * h / n1, (i + 1) * h / n1);
        for j in 0..n1 {
            let (c0, c1) = (j * w / n1, (j + 1) * w / n1);
            let mut acc = 0.0;
            for r in r0..r1 {
                acc += image.data()[r * w + c0..r * w + c1].iter().sum::<f64>();
            }
            out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Tensor::new(vec![n1, n1], out)
}

/// The initial observation `x_0`: the overview replicated over `c` channels.
pub fn initial_observation(overview: &Tensor, channels: usize) -> Tensor {
    let n = overview.shape()[0];
    let data = overview
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, channels))
        .collect();
    Tensor::new(vec![n, n, channels], data).expect("overview shape")
}
