//! Depth dropout augmentation.
//!
//! A library of binary dropout masks is built from patches (cut from real
//! sequences or synthesized), and during training each depth sample is
//! replaced, with a given probability, by its elementwise product with a
//! uniformly drawn mask. Erased pixels turn black in every channel.

mod container;
mod library;
mod mask;
mod patches;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::encoding::EncodedImage;

pub use container::{read_library, sidecar_path, write_library, LibrarySidecar, MAGIC, VERSION};
pub use library::{build_library, CompositionRecord, MaskLibrary, MaskSource};
pub use mask::{compose_masks, ComposeOp, NoiseMask};
pub use patches::{
    extract_patches, synthesize_mask, synthesize_patches, window_mask, DensityGroups,
    GroupedPatches, GROUP_COUNT,
};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("size mismatch: expected {expected} pixels, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("frame {index} is {width}x{height}, smaller than the {side}x{side} patch")]
    FrameTooSmall { index: usize, width: usize, height: usize, side: usize },
    #[error("no frames to extract patches from")]
    NoFrames,
    #[error("need at least two non-empty density groups, found {0}")]
    InsufficientGroups(usize),
    #[error("mask library is empty")]
    EmptyLibrary,
    #[error("noise probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid density group boundaries {0:?}")]
    InvalidGroups(Vec<f64>),
    #[error("mask library file: {0}")]
    Format(String),
}

/// Stochastic dropout injection settings.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub probability: f64,
    pub library: Arc<MaskLibrary>,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn new(library: Arc<MaskLibrary>, probability: f64, seed: u64) -> Result<Self, NoiseError> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(NoiseError::InvalidProbability(probability));
        }
        if library.is_empty() {
            return Err(NoiseError::EmptyLibrary);
        }
        Ok(Self { probability, library, seed })
    }
}

/// Erases every pixel whose mask bit is clear.
pub fn apply_mask(img: &EncodedImage, mask: &NoiseMask) -> Result<EncodedImage, NoiseError> {
    if img.width() != mask.side() || img.height() != mask.side() {
        return Err(NoiseError::SizeMismatch {
            expected: mask.len(),
            actual: img.width() * img.height(),
        });
    }
    let mut out = img.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        if !mask.keep_at_index(i) {
            px.fill(0);
        }
    }
    Ok(out)
}

/// With probability `cfg.probability`, multiplies `img` by a uniformly chosen
/// library mask; otherwise returns it unchanged. Also returns the chosen
/// mask index, if any.
pub fn apply_noise<R: Rng + ?Sized>(
    img: &EncodedImage,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(EncodedImage, Option<usize>), NoiseError> {
    let lib = &cfg.library;
    if lib.is_empty() {
        return Err(NoiseError::EmptyLibrary);
    }
    if img.width() != lib.side || img.height() != lib.side {
        return Err(NoiseError::SizeMismatch {
            expected: lib.side * lib.side,
            actual: img.width() * img.height(),
        });
    }
    if rng.gen::<f64>() >= cfg.probability {
        return Ok((img.clone(), None));
    }
    let k = rng.gen_range(0..lib.len());
    Ok((apply_mask(img, &lib.masks[k])?, Some(k)))
}
