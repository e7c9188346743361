//! Depth-to-color encodings.
//!
//! Raw depth frames are single-channel millimeter images where `0` marks a
//! missing reading. Every encoder here produces a three-channel 8-bit
//! [`EncodedImage`] so a network designed for RGB input can consume depth.
//! Missing pixels always come out black `(0, 0, 0)`, which is also what the
//! dropout augmentation in [`crate::noise`] produces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("image dimensions must be positive (got {width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("expected {expected} values for the image dimensions, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("depth value {value} at index {index} is negative or not finite")]
    InvalidDepth { index: usize, value: f32 },
    #[error("every pixel is missing")]
    AllMissing,
    #[error("normalized level {value} at index {index} exceeds 255")]
    ValueOutOfRange { index: usize, value: u16 },
    #[error("invalid camera intrinsics: focal lengths must be positive")]
    InvalidIntrinsics,
}

/// Single-channel depth frame in millimeters, row-major. `0` means no reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthImage {
    pub const MISSING: f32 = 0.0;

    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, EncodingError> {
        if width == 0 || height == 0 {
            return Err(EncodingError::EmptyImage { width, height });
        }
        if values.len() != width * height {
            return Err(EncodingError::LengthMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(EncodingError::InvalidDepth { index, value });
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_missing(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == Self::MISSING
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == Self::MISSING).count()
    }
}

/// Depth rescaled to integer levels in `[0, 255]`.
///
/// Unlike [`DepthImage`], a level of `0` is a legitimate reading (the nearest
/// valid pixel), so missing pixels are tracked by an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    width: usize,
    height: usize,
    levels: Vec<u16>,
    valid: Vec<bool>,
}

impl NormalizedDepth {
    pub fn new(
        width: usize,
        height: usize,
        levels: Vec<u16>,
        valid: Vec<bool>,
    ) -> Result<Self, EncodingError> {
        if width == 0 || height == 0 {
            return Err(EncodingError::EmptyImage { width, height });
        }
        for len in [levels.len(), valid.len()] {
            if len != width * height {
                return Err(EncodingError::LengthMismatch {
                    expected: width * height,
                    actual: len,
                });
            }
        }
        Ok(Self { width, height, levels, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Re-applies min/max normalization over the valid levels.
    pub fn renormalize(&self) -> Result<Self, EncodingError> {
        let values: Vec<f64> = self.levels.iter().map(|&l| f64::from(l)).collect();
        let levels = stretch_levels(&values, &self.valid)?;
        Ok(Self { levels, ..self.clone() })
    }
}

/// Three-channel 8-bit image, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl EncodedImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, EncodingError> {
        if width == 0 || height == 0 {
            return Err(EncodingError::EmptyImage { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(EncodingError::LengthMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, EncodingError> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        let stride = self.width * 3;
        &self.data[y * stride..(y + 1) * stride]
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, EncodingError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Kinect-like focal length with the principal point at the image center.
    pub fn centered(width: usize, height: usize) -> Self {
        Self {
            fx: 570.3,
            fy: 570.3,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    fn validate(&self) -> Result<(), EncodingError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EncodingError::InvalidIntrinsics)
        }
    }
}

/// Which depth encoder a pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthEncoding {
    Jet,
    Gray,
    Normals,
}

impl DepthEncoding {
    pub const ALL: [DepthEncoding; 3] = [Self::Jet, Self::Gray, Self::Normals];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jet => "jet",
            Self::Gray => "gray",
            Self::Normals => "normals",
        }
    }

    /// Runs the full encoder. `intrinsics` is only consulted for normals and
    /// defaults to [`CameraIntrinsics::centered`].
    pub fn encode(
        self,
        depth: &DepthImage,
        intrinsics: Option<CameraIntrinsics>,
    ) -> Result<EncodedImage, EncodingError> {
        match self {
            Self::Jet => colorize_jet(&normalize_depth(depth)?),
            Self::Gray => colorize_gray(&normalize_depth(depth)?),
            Self::Normals => {
                let k = intrinsics
                    .unwrap_or_else(|| CameraIntrinsics::centered(depth.width(), depth.height()));
                encode_normals(depth, &k)
            }
        }
    }
}

impl std::str::FromStr for DepthEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jet" => Ok(Self::Jet),
            "gray" | "grey" => Ok(Self::Gray),
            "normals" => Ok(Self::Normals),
            other => Err(format!("unknown depth encoding `{other}`")),
        }
    }
}

/// Round half up and clamp into a byte.
pub(crate) fn to_byte(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn stretch_levels(values: &[f64], valid: &[bool]) -> Result<Vec<u16>, EncodingError> {
    let (min, max) = values
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .fold(None, |acc: Option<(f64, f64)>, (&v, _)| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .ok_or(EncodingError::AllMissing)?;
    let range = max - min;
    Ok(values
        .iter()
        .zip(valid)
        .map(|(&v, &ok)| {
            if !ok || range == 0.0 {
                0
            } else {
                u16::from(to_byte(255.0 * (v - min) / range))
            }
        })
        .collect())
}

/// Per-image min/max stretch of the valid pixels into `[0, 255]`.
pub fn normalize_depth(depth: &DepthImage) -> Result<NormalizedDepth, EncodingError> {
    let valid: Vec<bool> = depth.values.iter().map(|&v| v != DepthImage::MISSING).collect();
    let values: Vec<f64> = depth.values.iter().map(|&v| f64::from(v)).collect();
    let levels = stretch_levels(&values, &valid)?;
    NormalizedDepth::new(depth.width, depth.height, levels, valid)
}

/// Reversed jet: red (near) through green to blue (far), piecewise linear
/// between the three anchors.
pub fn jet_color(level: u16) -> [u8; 3] {
    let t = f64::from(level) / 255.0;
    if t <= 0.5 {
        [to_byte(255.0 * (1.0 - 2.0 * t)), to_byte(255.0 * 2.0 * t), 0]
    } else {
        [0, to_byte(255.0 * (2.0 - 2.0 * t)), to_byte(255.0 * (2.0 * t - 1.0))]
    }
}

fn colorize_with(
    depth: &NormalizedDepth,
    color: impl Fn(u16) -> [u8; 3],
) -> Result<EncodedImage, EncodingError> {
    let mut data = Vec::with_capacity(depth.levels.len() * 3);
    for (index, (&level, &ok)) in depth.levels.iter().zip(&depth.valid).enumerate() {
        if level > 255 {
            return Err(EncodingError::ValueOutOfRange { index, value: level });
        }
        if ok {
            data.extend_from_slice(&color(level));
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    EncodedImage::new(depth.width, depth.height, data)
}

pub fn colorize_jet(depth: &NormalizedDepth) -> Result<EncodedImage, EncodingError> {
    colorize_with(depth, jet_color)
}

pub fn colorize_gray(depth: &NormalizedDepth) -> Result<EncodedImage, EncodingError> {
    colorize_with(depth, |l| {
        let v = l as u8;
        [v, v, v]
    })
}

fn back_project(depth: &DepthImage, k: &CameraIntrinsics, x: usize, y: usize) -> [f64; 3] {
    let z = f64::from(depth.get(x, y));
    [(x as f64 - k.cx) * z / k.fx, (y as f64 - k.cy) * z / k.fy, z]
}

/// Unit surface normal at `(x, y)`, oriented toward the camera, or `None`
/// when any pixel of the 3x3 neighborhood (clipped to the image) is missing.
///
/// Tangents are central differences, falling back to one-sided differences
/// on the image border.
pub fn surface_normal(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    x: usize,
    y: usize,
) -> Option<[f64; 3]> {
    let (w, h) = (depth.width, depth.height);
    let x0 = x.saturating_sub(1);
    let x1 = (x + 1).min(w - 1);
    let y0 = y.saturating_sub(1);
    let y1 = (y + 1).min(h - 1);
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            if depth.is_missing(xx, yy) {
                return None;
            }
        }
    }
    if x0 == x1 || y0 == y1 {
        return None;
    }
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let tu = sub(back_project(depth, k, x1, y), back_project(depth, k, x0, y));
    let tv = sub(back_project(depth, k, x, y1), back_project(depth, k, x, y0));
    let mut n = [
        tu[1] * tv[2] - tu[2] * tv[1],
        tu[2] * tv[0] - tu[0] * tv[2],
        tu[0] * tv[1] - tu[1] * tv[0],
    ];
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let sign = if n[2] > 0.0 { -1.0 } else { 1.0 };
    for c in &mut n {
        *c *= sign / norm;
    }
    Some(n)
}

/// Maps each normal component from `[-1, 1]` to one 8-bit channel.
pub fn encode_normals(depth: &DepthImage, k: &CameraIntrinsics) -> Result<EncodedImage, EncodingError> {
    k.validate()?;
    if depth.missing_count() == depth.values.len() {
        return Err(EncodingError::AllMissing);
    }
    let mut out = EncodedImage::filled(depth.width, depth.height, [0, 0, 0])?;
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(n) = surface_normal(depth, k, x, y) {
                let map = |c: f64| to_byte((c + 1.0) * 0.5 * 255.0);
                out.set_pixel(x, y, [map(n[0]), map(n[1]), map(n[2])]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(w: usize, h: usize, v: &[f32]) -> DepthImage {
        DepthImage::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_depth(&depth(2, 1, &[1000.0, 3000.0])).unwrap();
        assert_eq!(n.levels(), &[0, 255]);

        let n = normalize_depth(&depth(3, 1, &[500.0; 3])).unwrap();
        assert_eq!(n.levels(), &[0, 0, 0]);

        let n = normalize_depth(&depth(3, 1, &[0.0, 1000.0, 2000.0])).unwrap();
        assert_eq!(n.levels(), &[0, 0, 255]);
        assert_eq!(n.valid(), &[false, true, true]);
    }

    #[test]
    fn normalize_all_missing() {
        assert_eq!(
            normalize_depth(&depth(2, 2, &[0.0; 4])).unwrap_err(),
            EncodingError::AllMissing
        );
    }

    #[test]
    fn rejects_bad_depth() {
        assert!(matches!(
            DepthImage::new(2, 1, vec![1.0, -3.0]),
            Err(EncodingError::InvalidDepth { index: 1, .. })
        ));
        assert!(DepthImage::new(2, 1, vec![f32::NAN, 1.0]).is_err());
        assert!(DepthImage::new(0, 1, vec![]).is_err());
        assert!(DepthImage::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn jet_anchors() {
        assert_eq!(jet_color(0), [255, 0, 0]);
        assert_eq!(jet_color(255), [0, 0, 255]);
        // t = 128/255: G = 255 * (2 - 256/255) = 254, B = 255 * (256/255 - 1) = 1
        assert_eq!(jet_color(128), [0, 254, 1]);
        assert_eq!(jet_color(127), [1, 254, 0]);
    }

    #[test]
    fn jet_is_injective_continuous_and_monotone() {
        let colors: Vec<[u8; 3]> = (0..=255).map(jet_color).collect();
        let unique: std::collections::HashSet<_> = colors.iter().collect();
        assert_eq!(unique.len(), 256);
        for pair in colors.windows(2) {
            for c in 0..3 {
                assert!((i16::from(pair[0][c]) - i16::from(pair[1][c])).abs() <= 3);
            }
            assert!(pair[1][2] >= pair[0][2], "blue non-decreasing");
            assert!(pair[1][0] <= pair[0][0], "red non-increasing");
        }
    }

    #[test]
    fn colorize_missing_is_black() {
        let n = normalize_depth(&depth(3, 1, &[0.0, 1000.0, 2000.0])).unwrap();
        let jet = colorize_jet(&n).unwrap();
        assert_eq!(jet.pixel(0, 0), [0, 0, 0]);
        assert_eq!(jet.pixel(1, 0), [255, 0, 0]);
        assert_eq!(jet.pixel(2, 0), [0, 0, 255]);
        let gray = colorize_gray(&n).unwrap();
        assert_eq!(gray.pixel(0, 0), [0, 0, 0]);
        assert_eq!(gray.pixel(2, 0), [255, 255, 255]);
    }

    #[test]
    fn gray_replicates() {
        let n = NormalizedDepth::new(2, 1, vec![37, 200], vec![true, true]).unwrap();
        let g = colorize_gray(&n).unwrap();
        assert_eq!(g.pixel(0, 0), [37, 37, 37]);
        assert_eq!(g.pixel(1, 0), [200, 200, 200]);
    }

    #[test]
    fn colorize_rejects_levels_above_255() {
        let n = NormalizedDepth::new(2, 1, vec![10, 256], vec![true, true]).unwrap();
        assert_eq!(
            colorize_jet(&n).unwrap_err(),
            EncodingError::ValueOutOfRange { index: 1, value: 256 }
        );
        assert!(colorize_gray(&n).is_err());
    }

    #[test]
    fn normals_of_fronto_parallel_plane() {
        let d = depth(8, 6, &[1000.0; 48]);
        let k = CameraIntrinsics::centered(8, 6);
        let img = encode_normals(&d, &k).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(img.pixel(x, y), [128, 128, 0]);
            }
        }
    }

    #[test]
    fn normals_of_ramp_along_u() {
        // z = z0 + X where X = (u - cx) z / fx, i.e. z = z0 / (1 - (u - cx) / fx).
        let (w, h) = (9, 7);
        let k = CameraIntrinsics::new(200.0, 200.0, 4.0, 3.0).unwrap();
        let z0 = 1000.0;
        let values: Vec<f32> = (0..h)
            .flat_map(|_| (0..w).map(move |u| (z0 / (1.0 - (u as f64 - k.cx) / k.fx)) as f32))
            .collect();
        let d = DepthImage::new(w, h, values).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let n = surface_normal(&d, &k, x, y).unwrap();
                assert!((n[0] - s).abs() < 1e-4, "{n:?}");
                assert!(n[1].abs() < 1e-4, "{n:?}");
                assert!((n[2] + s).abs() < 1e-4, "{n:?}");
            }
        }
    }

    #[test]
    fn normals_hole_blackens_neighborhood() {
        let mut v = [1000.0f32; 9];
        v[4] = 0.0;
        let img = encode_normals(&depth(3, 3, &v), &CameraIntrinsics::centered(3, 3)).unwrap();
        assert!(img.data().iter().all(|&c| c == 0));
    }

    #[test]
    fn normals_errors() {
        let d = depth(2, 2, &[0.0; 4]);
        assert_eq!(
            encode_normals(&d, &CameraIntrinsics::centered(2, 2)).unwrap_err(),
            EncodingError::AllMissing
        );
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    fn plane_depth() -> impl Strategy<Value = (DepthImage, CameraIntrinsics)> {
        (
            4usize..12,
            4usize..12,
            500.0f64..3000.0,
            -0.5f64..0.5,
            -0.5f64..0.5,
            100.0f64..600.0,
        )
            .prop_map(|(w, h, d0, a, b, f)| {
                // Plane n . P = d0 with n = (a, b, 1); ray depth z = d0 / (a x' + b y' + 1).
                let k = CameraIntrinsics::centered(w, h);
                let k = CameraIntrinsics { fx: f, fy: f, ..k };
                let values = (0..h)
                    .flat_map(|v| {
                        (0..w).map(move |u| {
                            let xr = (u as f64 - k.cx) / k.fx;
                            let yr = (v as f64 - k.cy) / k.fy;
                            (d0 / (a * xr + b * yr + 1.0)) as f32
                        })
                    })
                    .collect();
                (DepthImage::new(w, h, values).unwrap(), k)
            })
    }

    proptest! {
        #[test]
        fn plane_normals_are_unit(( d, k) in plane_depth()) {
            for y in 1..d.height() - 1 {
                for x in 1..d.width() - 1 {
                    let n = surface_normal(&d, &k, x, y).unwrap();
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    prop_assert!((len - 1.0).abs() < 1e-6);
                    prop_assert!(n[2] <= 0.0);
                }
            }
        }

        #[test]
        fn normalize_is_idempotent_on_full_range(
            mut levels in proptest::collection::vec(0u16..=255, 2..64),
            valid_bits in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let n = levels.len();
            levels[0] = 0;
            levels[n - 1] = 255;
            let mut valid: Vec<bool> = valid_bits[..n].to_vec();
            valid[0] = true;
            valid[n - 1] = true;
            for (l, ok) in levels.iter_mut().zip(&valid) {
                if !ok { *l = 0; }
            }
            let img = NormalizedDepth::new(n, 1, levels, valid).unwrap();
            prop_assert_eq!(img.renormalize().unwrap(), img);
        }

        #[test]
        fn encoders_stay_in_range(values in proptest::collection::vec(0.0f32..5000.0, 16)) {
            let d = DepthImage::new(4, 4, values).unwrap();
            if d.missing_count() < 16 {
                for enc in DepthEncoding::ALL {
                    let img = enc.encode(&d, None).unwrap();
                    prop_assert_eq!(img.data().len(), 48);
                }
            }
        }
    }
}
