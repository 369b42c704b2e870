//! Diffusion-based robust image watermarking.
//!
//! A conditional diffusion model embeds an L-bit binary message into a facial
//! image by guided denoising: the cover image (scaled by the schedule's noise
//! coefficient) and the watermark (via embedding-table lookup and
//! cross-attention fusion) steer each reverse-process step, so the sampler
//! generates a watermarked image that stays close to the cover. A separate
//! convolutional decoder recovers the message from a distorted image in a
//! single forward pass. Optional decode guidance backpropagates the decoded
//! message's log-probability after a surrogate manipulation through the
//! sampling step to harden the watermark against reconstruction-style edits.

pub mod codec;
pub mod config;
pub mod data;
pub mod distortion;
pub mod error;
pub mod fusion;
pub mod image_io;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
