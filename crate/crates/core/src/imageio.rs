//! PNG reading and writing for depth frames and encoded images.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use thiserror::Error;

use crate::encoding::{DepthImage, EncodedImage, EncodingError};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: String,
        #[source]
        source: EncodingError,
    },
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> ImageIoError + '_ {
    move |source| ImageIoError::Image { path: path.display().to_string(), source }
}

/// Reads a single-channel PNG as millimeters. 8-bit inputs are taken as-is.
pub fn load_depth_png(path: &Path) -> Result<DepthImage, ImageIoError> {
    let img = image::open(path).map_err(image_err(path))?.into_luma16();
    let (w, h) = img.dimensions();
    let values = img.into_raw().into_iter().map(f32::from).collect();
    DepthImage::new(w as usize, h as usize, values)
        .map_err(|source| ImageIoError::Invalid { path: path.display().to_string(), source })
}

/// Writes depth as a 16-bit PNG, rounding to whole millimeters.
pub fn save_depth_png(depth: &DepthImage, path: &Path) -> Result<(), ImageIoError> {
    let raw: Vec<u16> = depth
        .values()
        .iter()
        .map(|&v| (v + 0.5).floor().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(image_err(path))
}

pub fn load_rgb_png(path: &Path) -> Result<EncodedImage, ImageIoError> {
    let img = image::open(path).map_err(image_err(path))?.into_rgb8();
    let (w, h) = img.dimensions();
    EncodedImage::new(w as usize, h as usize, img.into_raw())
        .map_err(|source| ImageIoError::Invalid { path: path.display().to_string(), source })
}

pub fn save_rgb_png(img: &EncodedImage, path: &Path) -> Result<(), ImageIoError> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .expect("buffer length matches dimensions");
    buf.save(path).map_err(image_err(path))
}
