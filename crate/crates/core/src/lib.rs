//! Uncertainty-aware domain-adaptive two-stage detection on synthetic
//! shape datasets.
//!
//! The crate covers data generation with controllable domain shift, a small
//! Faster R-CNN style detector on a hand-written autograd tape, entropy-based
//! uncertainty measures, image- and instance-level adversarial alignment,
//! training with an ablation-mode switch, evaluation, and experiment grids.

pub mod adaptation;
pub mod autograd;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod model;
pub mod params;
pub mod plot;
pub mod seeding;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use model::{Checkpoint, Model};
pub use training::{AblationMode, TrainConfig};
