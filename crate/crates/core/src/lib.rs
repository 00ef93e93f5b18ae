//! Reconstructing images from (simulated or recorded) voxel activity patterns.
//!
//! The pipeline has four learned stages plus a synthetic data source that
//! makes the whole thing verifiable on a desk-scale setup:
//!
//! 1. [`encoder`] — a small convolutional classifier whose first
//!    fully-connected activation is the feature vector `z`; a file-import
//!    path accepts precomputed features instead.
//! 2. [`ridge`] — multi-output ridge regression decoding voxel patterns
//!    into feature vectors (closed form, primal or dual).
//! 3. [`recon`] — a fully-connected + deconvolutional network mapping a
//!    feature vector to a coarse image.
//! 4. [`cgan`] — per-category conditional GANs refining coarse images.
//!
//! [`synth`] generates labeled toy images and a linear-Gaussian
//! features-to-voxels forward model, providing ground truth for decoder
//! verification. [`pipeline`] chains everything voxels-to-image and houses
//! the evaluation protocols.

pub mod error;
pub mod tensor;
pub mod io;
pub mod checkpoint;
pub mod synth;
pub mod nn;
pub mod encoder;
pub mod ridge;
pub mod recon;
pub mod cgan;
pub mod pipeline;

pub use error::{Error, Result};
pub use io::{ImageRGB, Split};
pub use tensor::TensorF32;
