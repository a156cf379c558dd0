//! Simulation and perception toolkit for marker-based visuotactile sensors.
//!
//! The crate covers the full pipeline: a quasi-static contact model for a
//! pin-tip marker membrane, a raster renderer for TacTip / ViTac / ViTacTip
//! style sensor images, image-similarity metrics, proximity estimation via
//! Gaussian process regression on SSIM features, classical marker tracking
//! and force estimation, a small reverse-mode tensor engine with the model
//! builders used by the learned benchmarks, paired image-to-image GAN
//! training (marker removal and light removal), and a dataset/experiment
//! harness with deterministic seeding.

pub mod config;
pub mod contact;
pub mod data;
pub mod error;
pub mod markers;
pub mod metrics;
pub mod neural;
pub mod proximity;
pub mod render;
pub mod tasks;
pub mod translation;

pub use config::SensorConfig;
pub use contact::{DeformationField, IndenterShape, MarkerField, Pose6, Wrench};
pub use data::{ContactScenario, Manifest};
pub use error::Error;
pub use render::{RenderStyle, Scene, SensorImage};
