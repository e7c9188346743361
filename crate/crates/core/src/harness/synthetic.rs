//! Procedural paired RGB/depth object frames.
//!
//! Each frame is a tight crop around one object with a 15% margin on every
//! side. Depth shows the object's relief in front of a far background plane;
//! RGB shows a textured elliptical silhouette that looks the same for every
//! shape. Which modality carries the class is set by [`ModalityMode`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError, Sample};
use crate::encoding::{DepthImage, EncodedImage};
use crate::noise::synthesize_mask;
use crate::seed::derive_seed;

const MARGIN: f64 = 0.15;
const BACKGROUND_MM: f64 = 1250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityMode {
    /// Class is the texture hue; depth shapes are random.
    RgbOnly,
    /// Class is the 3D shape; textures are random.
    DepthOnly,
    /// Class is a (shape, texture) pair with two textures: each modality
    /// alone only tells half of the code.
    Complementary,
}

impl std::str::FromStr for ModalityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb-only" | "rgb" => Ok(Self::RgbOnly),
            "depth-only" | "depth" => Ok(Self::DepthOnly),
            "complementary" => Ok(Self::Complementary),
            other => Err(format!("unknown modality mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    /// Sphere, box, pyramid, torus, lying cylinder, bowl; square footprints.
    Solids,
    /// Ellipsoidal domes that differ only in footprint aspect ratio.
    AspectRatios,
}

impl ShapeFamily {
    const SOLIDS: [&'static str; 6] = ["sphere", "box", "pyramid", "torus", "cylinder", "bowl"];
    const ASPECTS: [f64; 6] = [1.0, 2.0, 0.5, 3.0, 1.0 / 3.0, 1.5];

    pub fn shape_count(self) -> usize {
        match self {
            Self::Solids => Self::SOLIDS.len(),
            Self::AspectRatios => Self::ASPECTS.len(),
        }
    }

    fn shape_name(self, s: usize) -> String {
        match self {
            Self::Solids => Self::SOLIDS[s].to_string(),
            Self::AspectRatios => format!("aspect{:.2}", Self::ASPECTS[s]),
        }
    }
}

impl std::str::FromStr for ShapeFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solids" => Ok(Self::Solids),
            "aspect-ratios" | "aspect" => Ok(Self::AspectRatios),
            other => Err(format!("unknown shape family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub classes: usize,
    pub instances: usize,
    pub frames: usize,
    /// Longer side of each frame in pixels.
    pub side: usize,
    pub mode: ModalityMode,
    pub family: ShapeFamily,
    /// Render sensor-style dropout holes into the depth frames.
    pub noisy: bool,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            instances: 3,
            frames: 12,
            side: 64,
            mode: ModalityMode::Complementary,
            family: ShapeFamily::Solids,
            noisy: false,
            seed: 0,
        }
    }
}

const HUE_FAMILIES_MAX: usize = 12;

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.instances < 2 {
            return bad(format!("need at least 2 instances per class, got {}", self.instances));
        }
        if self.frames == 0 {
            return bad("need at least one frame per instance".into());
        }
        if self.side < 8 {
            return bad(format!("frame side {} is below the minimum of 8", self.side));
        }
        let shapes = self.family.shape_count();
        match self.mode {
            ModalityMode::DepthOnly if self.classes > shapes => {
                bad(format!("{} classes but the shape family has only {shapes} shapes", self.classes))
            }
            ModalityMode::RgbOnly if self.classes > HUE_FAMILIES_MAX => {
                bad(format!("at most {HUE_FAMILIES_MAX} texture classes are supported"))
            }
            ModalityMode::Complementary if !self.classes.is_multiple_of(2) || self.classes < 4 => {
                bad("complementary mode needs an even class count of at least 4".into())
            }
            ModalityMode::Complementary if self.classes / 2 > shapes => {
                bad(format!("{} classes need {} shapes; the family has {shapes}", self.classes, self.classes / 2))
            }
            _ => Ok(()),
        }
    }

    /// Shape and texture codes of a class; `None` means drawn at random.
    fn factors(&self, class: usize) -> (Option<usize>, Option<usize>) {
        match self.mode {
            ModalityMode::DepthOnly => (Some(class), None),
            ModalityMode::RgbOnly => (None, Some(class)),
            ModalityMode::Complementary => (Some(class / 2), Some(class % 2)),
        }
    }

    fn texture_families(&self) -> usize {
        match self.mode {
            ModalityMode::Complementary => 2,
            _ => self.classes,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|c| match self.factors(c) {
                (Some(s), Some(t)) => format!("{}-{}", self.family.shape_name(s), ["warm", "cool"][t]),
                (Some(s), None) => self.family.shape_name(s),
                (None, Some(t)) => format!("hue{t}"),
                (None, None) => unreachable!("every mode fixes at least one factor"),
            })
            .collect()
    }
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// Object-centred coordinates: the object spans `[-1, 1]` on both axes, the
/// frame spans `[-1.3, 1.3]`.
struct Canvas {
    width: usize,
    height: usize,
    shift: (f64, f64),
}

impl Canvas {
    fn new(aspect: f64, side: usize, rng: &mut ChaCha8Rng) -> Self {
        let (width, height) = if aspect >= 1.0 {
            (side, ((side as f64 / aspect).round() as usize).max(4))
        } else {
            (((side as f64 * aspect).round() as usize).max(4), side)
        };
        let shift = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
        Self { width, height, shift }
    }

    fn coords(&self, u: usize, v: usize) -> (f64, f64) {
        let half_w = self.width as f64 / 2.0 / (1.0 + 2.0 * MARGIN);
        let half_h = self.height as f64 / 2.0 / (1.0 + 2.0 * MARGIN);
        (
            (u as f64 + 0.5 - self.width as f64 / 2.0) / half_w - self.shift.0,
            (v as f64 + 0.5 - self.height as f64 / 2.0) / half_h - self.shift.1,
        )
    }
}

/// Height above the object base in `[0, 1]`, or `None` off the object.
fn solid_profile(shape: usize, x: f64, y: f64) -> Option<f64> {
    let r2 = x * x + y * y;
    match shape {
        0 => (r2 < 1.0).then(|| (1.0 - r2).sqrt()),
        1 => (x.abs() < 0.85 && y.abs() < 0.85).then_some(1.0),
        2 => {
            let m = x.abs().max(y.abs());
            (m < 1.0).then_some(1.0 - m)
        }
        3 => {
            let t = (r2.sqrt() - 0.65) / 0.3;
            (t.abs() < 1.0).then(|| (1.0 - t * t).sqrt())
        }
        4 => (x.abs() < 0.95 && y.abs() < 0.8).then(|| (1.0 - (y / 0.8).powi(2)).sqrt()),
        _ => (r2 < 1.0).then_some(0.35 + 0.65 * r2),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

struct Renderer<'a> {
    cfg: &'a SyntheticSceneConfig,
}

impl Renderer<'_> {
    fn aspect(&self, shape: usize, rng: &mut ChaCha8Rng) -> f64 {
        let jitter = rng.gen_range(-0.05f64..0.05).exp();
        match self.cfg.family {
            ShapeFamily::Solids => jitter * rng.gen_range(-0.05f64..0.05).exp(),
            ShapeFamily::AspectRatios => ShapeFamily::ASPECTS[shape] * jitter,
        }
    }

    fn depth(&self, canvas: &Canvas, shape: usize, inst_key: &str, frame_key: &str) -> DepthImage {
        let seed = self.cfg.seed;
        let mut inst = rng_for(seed, &format!("depth-instance/{inst_key}"));
        let base = inst.gen_range(850.0..950.0);
        let relief = inst.gen_range(120.0..200.0);
        let mut fr = rng_for(seed, &format!("depth-frame/{frame_key}"));
        let spin: f64 = match self.cfg.family {
            ShapeFamily::Solids => fr.gen_range(-0.2..0.2),
            ShapeFamily::AspectRatios => 0.0,
        };
        let (sin, cos) = spin.sin_cos();
        let tilt = (fr.gen_range(-1.0..1.0) * 40.0, fr.gen_range(-1.0..1.0) * 40.0);
        let mut values = Vec::with_capacity(canvas.width * canvas.height);
        for v in 0..canvas.height {
            for u in 0..canvas.width {
                let (x, y) = canvas.coords(u, v);
                let (xr, yr) = (cos * x + sin * y, -sin * x + cos * y);
                let h = match self.cfg.family {
                    ShapeFamily::Solids => solid_profile(shape, xr, yr),
                    ShapeFamily::AspectRatios => {
                        let r2 = x * x + y * y;
                        (r2 < 1.0).then(|| (1.0 - r2).sqrt())
                    }
                };
                let z = match h {
                    Some(h) => base + relief * (1.0 - h),
                    None => BACKGROUND_MM + tilt.0 * x / 1.3 + tilt.1 * y / 1.3,
                };
                values.push((z + fr.gen_range(-2.0..2.0)).round() as f32);
            }
        }
        if self.cfg.noisy {
            let side = canvas.width.max(canvas.height);
            let mask = synthesize_mask(side, &mut fr);
            for v in 0..canvas.height {
                for u in 0..canvas.width {
                    if !mask.keep(u, v) {
                        values[v * canvas.width + u] = DepthImage::MISSING;
                    }
                }
            }
            // a frame is never entirely missing
            if values.iter().all(|&z| z == DepthImage::MISSING) {
                values[0] = BACKGROUND_MM as f32;
            }
        }
        DepthImage::new(canvas.width, canvas.height, values).expect("finite, non-negative depth")
    }

    fn rgb(&self, canvas: &Canvas, texture: Option<usize>, inst_key: &str, frame_key: &str) -> EncodedImage {
        let seed = self.cfg.seed;
        let mut inst = rng_for(seed, &format!("rgb-instance/{inst_key}"));
        let hue = match texture {
            Some(t) => 360.0 * t as f64 / self.cfg.texture_families() as f64 + inst.gen_range(-12.0..12.0),
            None => inst.gen_range(0.0..360.0),
        };
        let sat = inst.gen_range(0.55..0.9);
        let val = inst.gen_range(0.6..0.9);
        let angle: f64 = inst.gen_range(0.0..PI);
        let period = inst.gen_range(4.0..9.0);
        let mut fr = rng_for(seed, &format!("rgb-frame/{frame_key}"));
        let phase = fr.gen_range(0.0..2.0 * PI);
        let gray = fr.gen_range(90.0..160.0);
        let tint = [fr.gen_range(-10.0..10.0), fr.gen_range(-10.0..10.0), fr.gen_range(-10.0..10.0)];
        let base = hsv_to_rgb(hue, sat, val);
        let (sa, ca) = angle.sin_cos();
        let mut img = EncodedImage::filled(canvas.width, canvas.height, [0, 0, 0]).expect("positive size");
        for v in 0..canvas.height {
            for u in 0..canvas.width {
                let (x, y) = canvas.coords(u, v);
                let noise = fr.gen_range(-6.0..6.0);
                let px = if x * x + y * y <= 1.0 {
                    let proj = ca * u as f64 + sa * v as f64;
                    let shade = 1.0 - 0.25 * (0.5 + 0.5 * (2.0 * PI * proj / period + phase).sin());
                    base.map(|c| byte(c * shade + noise))
                } else {
                    [0, 1, 2].map(|k| byte(gray + tint[k] + noise))
                };
                img.set_pixel(u, v, px);
            }
        }
        img
    }
}

/// Renders `classes x instances x frames` samples. Instance ids run
/// `class * instances + j`; samples are ordered by class, instance, frame.
///
/// In complementary mode the depth of a frame depends only on (shape,
/// instance index, frame) and the RGB only on (texture, instance index,
/// frame), so the two classes sharing a shape have identical depth frames
/// and the two sharing a texture have identical RGB frames.
pub fn generate_synthetic(cfg: &SyntheticSceneConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let render = Renderer { cfg };
    let mut samples = Vec::with_capacity(cfg.classes * cfg.instances * cfg.frames);
    for class in 0..cfg.classes {
        let (shape, texture) = cfg.factors(class);
        for j in 0..cfg.instances {
            // keys that ignore the class where the mode shares content
            let (canvas_key, depth_key, rgb_key) = match cfg.mode {
                ModalityMode::Complementary => (
                    format!("{j}"),
                    format!("s{}/{j}", shape.expect("set")),
                    format!("t{}/{j}", texture.expect("set")),
                ),
                _ => (format!("c{class}/{j}"), format!("c{class}/{j}"), format!("c{class}/{j}")),
            };
            let shape = shape.unwrap_or_else(|| {
                rng_for(cfg.seed, &format!("random-shape/{class}/{j}")).gen_range(0..cfg.family.shape_count())
            });
            for f in 0..cfg.frames {
                // the canvas is shared by both modalities of a sample
                let mut canvas_rng = rng_for(cfg.seed, &format!("canvas/{canvas_key}/{f}"));
                let aspect = render.aspect(shape, &mut canvas_rng);
                let canvas = Canvas::new(aspect, cfg.side, &mut canvas_rng);
                let depth = render.depth(&canvas, shape, &depth_key, &format!("{depth_key}/{f}"));
                let rgb = render.rgb(&canvas, texture, &rgb_key, &format!("{rgb_key}/{f}"));
                samples.push(Sample { rgb, depth, class, instance: class * cfg.instances + j });
            }
        }
    }
    Dataset::new(cfg.class_names(), samples)
}
