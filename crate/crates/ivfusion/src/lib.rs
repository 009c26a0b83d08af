//! Decomposition-based infrared/visible image fusion for scenes with real
//! interference (haze, rain, snow, noise, overexposure).
//!
//! The pipeline classifies visible pixels by estimated light transmittance,
//! splits the image into contrast and structure layers, separates every
//! stream into low/high-frequency bands with a scale-and-noise-aware filter,
//! fuses details under monogenic phase-consistency weights and energy under
//! Gabor-variance weights, and reconstructs by summation. Companion modules
//! provide objective quality metrics and a degradation synthesizer for
//! stress testing.

pub mod decompose;
pub mod degrade;
pub mod dump;
mod error;
mod fft;
pub mod fusion;
pub mod imgcore;
pub mod io;
pub mod metrics;
mod solver;
pub mod transmission;

pub use error::{Error, Result};
pub use fusion::{fuse_pipeline, Diagnostics, FusionConfig, FusionOutput};
pub use imgcore::{GrayImage, NoiseLevel, Pmf256, RgbImage};
pub use transmission::TransmissionMap;
