//! Disentangling generator fingerprints from synthetic images.
//!
//! A U-Net style generator extracts a signed residual ("fingerprint") from an
//! image; the residual is planted on a real carrier and supervised by a
//! PatchGAN discriminator, an auxiliary source classifier and a frozen
//! perceptual extractor. The generator's bottleneck, read by a small head,
//! attributes images to their source generator.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod model;
pub mod networks;
pub mod toy;
pub mod training;

pub use error::{GfdError, Result};
