//! Recurrent existence determination.
//!
//! An agent decides whether a pattern exists in a large image by taking a
//! fixed number of multi-resolution glimpses. A convolutional GRU carries
//! what it has seen, a linear head emits a per-step existence probability,
//! and a k-maximum layer aggregates those into the final answer. Training
//! combines a score-function term for the non-differentiable glimpse
//! locations with direct backpropagation of the regret through the
//! aggregation layer.

pub mod aggregation;
pub mod error;
pub mod glimpse;
pub mod gru;
pub mod harness;
pub mod numeric;
pub mod policy;
pub mod raster;
pub mod seeding;
pub mod stained;

pub use error::{Error, Result};
pub use numeric::{Tape, Tensor, Var};
