//! Thermal face classification pipeline built from scratch: PGM ingestion,
//! per-pixel Kalman denoising, VGG-19 / ResNet-50 construction with exact
//! parameter accounting, gradient-checked training and evaluation metrics.

pub mod cli;
pub mod image_io;
pub mod kalman;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use tensor::Tensor;
