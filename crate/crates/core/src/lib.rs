//! RGB-D object recognition with two convolutional streams and late fusion:
//! depth colorization, aspect-preserving resizing, depth dropout
//! augmentation, a small training engine and an experiment harness.

pub mod encoding;
pub mod geometry;
pub mod harness;
pub mod imageio;
pub mod nn;
pub mod noise;
pub mod seed;
