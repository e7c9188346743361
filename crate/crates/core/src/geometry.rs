//! Fixed-size network input: warping or aspect-preserving border tiling,
//! plus random crop / horizontal flip augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{to_byte, EncodedImage};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("target side must be positive")]
    ZeroTarget,
    #[error("crop {side}x{side} at ({x}, {y}) exceeds the {width}x{height} source")]
    OutOfBounds {
        side: usize,
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Warp,
    Tile,
}

impl std::str::FromStr for ResizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warp" => Ok(Self::Warp),
            "tile" => Ok(Self::Tile),
            other => Err(format!("unknown resize mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizePolicy {
    pub mode: ResizeMode,
    pub target_side: usize,
}

impl Default for ResizePolicy {
    fn default() -> Self {
        Self { mode: ResizeMode::Tile, target_side: 256 }
    }
}

impl ResizePolicy {
    pub fn apply(&self, img: &EncodedImage) -> Result<EncodedImage, GeometryError> {
        match self.mode {
            ResizeMode::Warp => resize_warp(img, self.target_side),
            ResizeMode::Tile => resize_tile(img, self.target_side),
        }
    }
}

/// Bilinear resampling with pixel-center alignment and clamp-to-edge.
pub fn resize_bilinear(
    img: &EncodedImage,
    out_w: usize,
    out_h: usize,
) -> Result<EncodedImage, GeometryError> {
    if out_w == 0 || out_h == 0 {
        return Err(GeometryError::ZeroTarget);
    }
    let (in_w, in_h) = (img.width(), img.height());
    if (in_w, in_h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);
    let src = img.data();
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| f64::from(src[(y * in_w + x) * 3 + c]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                data.push(to_byte(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Ok(EncodedImage::new(out_w, out_h, data).expect("dimensions checked"))
}

/// Stretches to `target x target`, discarding the aspect ratio.
pub fn resize_warp(img: &EncodedImage, target: usize) -> Result<EncodedImage, GeometryError> {
    resize_bilinear(img, target, target)
}

/// Size of the longer-side-to-`target` scaled image, before padding.
pub fn tile_scaled_size(width: usize, height: usize, target: usize) -> (usize, usize) {
    let short = |s: usize, l: usize| {
        (((s as f64) * target as f64 / l as f64 + 0.5).floor() as usize).clamp(1, target)
    };
    if width >= height {
        (target, short(height, width))
    } else {
        (short(width, height), target)
    }
}

/// Scales the longer side to `target`, then pads the short axis by
/// replicating the boundary rows (landscape) or columns (portrait). An odd
/// deficit puts the extra pixel at the bottom/right.
pub fn resize_tile(img: &EncodedImage, target: usize) -> Result<EncodedImage, GeometryError> {
    if target == 0 {
        return Err(GeometryError::ZeroTarget);
    }
    let (sw, sh) = tile_scaled_size(img.width(), img.height(), target);
    let scaled = resize_bilinear(img, sw, sh)?;
    let pad_x = (target - sw) / 2;
    let pad_y = (target - sh) / 2;
    let src = scaled.data();
    let mut data = Vec::with_capacity(target * target * 3);
    for y in 0..target {
        let sy = y.saturating_sub(pad_y).min(sh - 1);
        for x in 0..target {
            let sx = x.saturating_sub(pad_x).min(sw - 1);
            let i = (sy * sw + sx) * 3;
            data.extend_from_slice(&src[i..i + 3]);
        }
    }
    Ok(EncodedImage::new(target, target, data).expect("dimensions checked"))
}

/// A square crop window plus an optional left-right mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub crop_side: usize,
    pub flip: bool,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl CropSpec {
    pub fn center(width: usize, height: usize, crop_side: usize) -> Self {
        Self {
            crop_side,
            flip: false,
            offset_x: width.saturating_sub(crop_side) / 2,
            offset_y: height.saturating_sub(crop_side) / 2,
        }
    }

    /// Uniform offsets and a fair flip coin.
    pub fn random<R: Rng + ?Sized>(width: usize, height: usize, crop_side: usize, rng: &mut R) -> Self {
        let offset_x = rng.gen_range(0..=width.saturating_sub(crop_side));
        let offset_y = rng.gen_range(0..=height.saturating_sub(crop_side));
        let flip = rng.gen_bool(0.5);
        Self { crop_side, flip, offset_x, offset_y }
    }
}

pub fn crop_and_flip(img: &EncodedImage, spec: &CropSpec) -> Result<EncodedImage, GeometryError> {
    let side = spec.crop_side;
    if side == 0
        || spec.offset_x + side > img.width()
        || spec.offset_y + side > img.height()
    {
        return Err(GeometryError::OutOfBounds {
            side,
            x: spec.offset_x,
            y: spec.offset_y,
            width: img.width(),
            height: img.height(),
        });
    }
    let mut data = Vec::with_capacity(side * side * 3);
    for y in spec.offset_y..spec.offset_y + side {
        let row = img.row(y);
        let window = &row[spec.offset_x * 3..(spec.offset_x + side) * 3];
        if spec.flip {
            for px in window.chunks_exact(3).rev() {
                data.extend_from_slice(px);
            }
        } else {
            data.extend_from_slice(window);
        }
    }
    Ok(EncodedImage::new(side, side, data).expect("dimensions checked"))
}
