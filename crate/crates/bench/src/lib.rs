//! Shared fixtures for the benchmarks.

use red_core::harness::RunConfig;
use red_core::policy::{ModelConfig, ModelParams};
use red_core::raster::Raster;
use red_core::seeding::{stream, Domain};

/// Full-size glimpse and state settings with a short horizon.
pub fn model(horizon: usize) -> ModelConfig {
    RunConfig {
        horizon,
        k: horizon.min(25),
        t0: 1,
        ..RunConfig::default()
    }
    .model()
    .expect("valid bench config")
}

pub fn params(model: &ModelConfig) -> ModelParams {
    ModelParams::init(model, &mut stream(0, Domain::Init, 0, 0))
}

/// Smooth deterministic test pattern in `[0, 1]`.
pub fn image(side: usize) -> Raster {
    Raster::from_fn(side, side, |r, c| {
        0.5 + 0.5 * ((r as f64 * 0.05).sin() * (c as f64 * 0.03).cos())
    })
}
