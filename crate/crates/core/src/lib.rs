//! Vascular feature estimation, the VAFO-Loss, and evaluation metrics for
//! artery/vein segmentation maps.
//!
//! Label maps carry one class id per pixel (background, artery, vein,
//! uncertain); probability maps carry one plane per class. The `synth` and
//! `downstream` modules provide the synthetic experiments used to check the
//! feature-error analysis and the single-feature risk model.

pub mod cli;
pub mod downstream;
pub mod features;
pub mod loss;
pub mod metrics;
pub mod morphology;
pub mod raster_io;
pub mod synth;
