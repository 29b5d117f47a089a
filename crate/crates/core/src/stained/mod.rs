//! Stained-MNIST synthesis: upscale, smooth, thin the strokes, and plant
//! bright dot stains at high-gradient pixels.

pub mod filters;
pub mod glyphs;
pub mod idx;
pub mod io;
pub mod synth;

pub use synth::{synthesize_dataset, synthesize_each, synthesize_one, DigitSource, StainConfig, SynthReport, Synthesized};

use crate::raster::Raster;

/// Where an image came from.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    /// Index of the source digit (or generator index).
    pub source_index: usize,
    /// Seed of the per-image random stream.
    pub seed: u64,
    /// File name when the image was loaded from or written to disk.
    pub name: String,
}

/// An image with its existence label, `1` meaning the pattern is present.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Raster,
    pub label: u8,
    pub provenance: Provenance,
}
