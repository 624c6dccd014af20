//! Adversarial multiple-instance learning for time-to-event estimation on
//! bags of patch features.
//!
//! A conditional generator maps a bag plus noise to a normalized
//! time-to-event; a region-level projection discriminator judges
//! (bag, time) pairs. Training alternates the two with gradient
//! accumulation, optionally cycling through folds of unlabeled bags.

pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod losses;
pub mod nn;
pub mod parallel;
pub mod patching;
pub mod rng;
pub mod synth;
pub mod tensors;
pub mod trainer;

pub use error::{Error, Result};
