//! Source patches for the mask library: binary missing-value indicators cut
//! from real depth sequences, or procedurally synthesized, binned into five
//! dropout-density groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NoiseError, NoiseMask};
use crate::encoding::DepthImage;

pub const GROUP_COUNT: usize = 5;

/// Five contiguous bins over the dropout fraction `[0, 1]`.
///
/// A fraction equal to an interior boundary falls into the lower bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGroups {
    boundaries: [f64; GROUP_COUNT + 1],
}

impl DensityGroups {
    pub fn equal_width() -> Self {
        let mut boundaries = [0.0; GROUP_COUNT + 1];
        for (j, b) in boundaries.iter_mut().enumerate() {
            *b = j as f64 / GROUP_COUNT as f64;
        }
        Self { boundaries }
    }

    pub fn from_boundaries(boundaries: [f64; GROUP_COUNT + 1]) -> Result<Self, NoiseError> {
        let ordered = boundaries.windows(2).all(|w| w[0] <= w[1]);
        if boundaries[0] != 0.0 || boundaries[GROUP_COUNT] != 1.0 || !ordered {
            return Err(NoiseError::InvalidGroups(boundaries.to_vec()));
        }
        Ok(Self { boundaries })
    }

    /// Interior boundaries at the quintiles of the observed fractions. A pool
    /// without spread (every fraction equal) falls back to equal-width bins.
    pub fn quintiles(fractions: &[f64]) -> Self {
        let mut sorted = fractions.to_vec();
        sorted.sort_by(f64::total_cmp);
        match (sorted.first(), sorted.last()) {
            (Some(lo), Some(hi)) if lo < hi => {
                let mut boundaries = [0.0; GROUP_COUNT + 1];
                boundaries[GROUP_COUNT] = 1.0;
                let n = sorted.len();
                for (j, b) in boundaries.iter_mut().enumerate().take(GROUP_COUNT).skip(1) {
                    let pos = j as f64 / GROUP_COUNT as f64 * (n - 1) as f64;
                    let i = pos.floor() as usize;
                    let frac = pos - i as f64;
                    let next = sorted[(i + 1).min(n - 1)];
                    *b = sorted[i] + (next - sorted[i]) * frac;
                }
                Self { boundaries }
            }
            _ => Self::equal_width(),
        }
    }

    pub fn boundaries(&self) -> &[f64; GROUP_COUNT + 1] {
        &self.boundaries
    }

    pub fn group_of(&self, fraction: f64) -> usize {
        self.boundaries[1..GROUP_COUNT].iter().filter(|&&b| fraction > b).count()
    }
}

/// Patch pool with its density-group assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPatches {
    pub masks: Vec<NoiseMask>,
    pub groups: Vec<usize>,
    pub boundaries: DensityGroups,
}

impl GroupedPatches {
    /// Bins `masks` by quintiles of their own dropout fractions.
    pub fn bin(masks: Vec<NoiseMask>) -> Self {
        let fractions: Vec<f64> = masks.iter().map(NoiseMask::dropout_fraction).collect();
        let boundaries = DensityGroups::quintiles(&fractions);
        let groups = fractions.iter().map(|&f| boundaries.group_of(f)).collect();
        Self { masks, groups, boundaries }
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.masks.len()).filter(|&i| self.groups[i] == group).collect()
    }

    pub fn group_sizes(&self) -> [usize; GROUP_COUNT] {
        let mut sizes = [0; GROUP_COUNT];
        for &g in &self.groups {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn side(&self) -> Option<usize> {
        self.masks.first().map(NoiseMask::side)
    }
}

/// Missing-value indicator of one window of a depth frame.
pub fn window_mask(frame: &DepthImage, x0: usize, y0: usize, side: usize) -> NoiseMask {
    NoiseMask::from_fn(side, |x, y| !frame.is_missing(x0 + x, y0 + y))
}

/// Cuts `count` uniformly placed `side x side` windows from uniformly chosen
/// frames.
pub fn extract_patches(
    frames: &[DepthImage],
    count: usize,
    side: usize,
    seed: u64,
) -> Result<GroupedPatches, NoiseError> {
    if frames.is_empty() && count > 0 {
        return Err(NoiseError::NoFrames);
    }
    if let Some((index, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width() < side || f.height() < side)
    {
        return Err(NoiseError::FrameTooSmall { index, width: f.width(), height: f.height(), side });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = (0..count)
        .map(|_| {
            let frame = &frames[rng.gen_range(0..frames.len())];
            let x0 = rng.gen_range(0..=frame.width() - side);
            let y0 = rng.gen_range(0..=frame.height() - side);
            window_mask(frame, x0, y0, side)
        })
        .collect();
    Ok(GroupedPatches::bin(masks))
}

fn erase_ellipse(mask: &mut NoiseMask, cx: f64, cy: f64, rx: f64, ry: f64, angle: f64) {
    let side = mask.side() as f64;
    let r = rx.max(ry);
    let (sin, cos) = angle.sin_cos();
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = (cx + r).ceil().min(side - 1.0).max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = (cy + r).ceil().min(side - 1.0).max(0.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (dx * cos + dy * sin) / rx;
            let v = (-dx * sin + dy * cos) / ry;
            if u * u + v * v <= 1.0 {
                mask.set(x, y, false);
            }
        }
    }
}

/// Ragged band of dropout hugging one image border.
fn erase_edge_band(mask: &mut NoiseMask, depth: f64, rng: &mut ChaCha8Rng) {
    let side = mask.side();
    let edge = rng.gen_range(0..4);
    let mut width = depth;
    for t in 0..side {
        width = (width + rng.gen_range(-1.0..=1.0)).clamp(0.0, depth * 1.5);
        for d in 0..width.round() as usize {
            if d >= side {
                break;
            }
            let (x, y) = match edge {
                0 => (t, d),
                1 => (t, side - 1 - d),
                2 => (d, t),
                _ => (side - 1 - d, t),
            };
            mask.set(x, y, false);
        }
    }
}

/// Thin arc, like the dropout along an object silhouette.
fn erase_contour(mask: &mut NoiseMask, rng: &mut ChaCha8Rng) {
    let side = mask.side() as f64;
    let cx = rng.gen_range(0.0..side);
    let cy = rng.gen_range(0.0..side);
    let radius = rng.gen_range(0.1..0.5) * side;
    let thickness = rng.gen_range(0.5..2.5);
    let start = rng.gen_range(0.0..std::f64::consts::TAU);
    let sweep = rng.gen_range(0.5..std::f64::consts::TAU);
    let steps = (radius * sweep * 2.0).ceil() as usize + 1;
    for s in 0..steps {
        let a = start + sweep * s as f64 / steps as f64;
        let (px, py) = (cx + radius * a.cos(), cy + radius * a.sin());
        erase_ellipse(mask, px, py, thickness, thickness, 0.0);
    }
}

fn erase_speckle(mask: &mut NoiseMask, count: usize, rng: &mut ChaCha8Rng) {
    let side = mask.side();
    for _ in 0..count {
        let (x, y) = (rng.gen_range(0..side), rng.gen_range(0..side));
        mask.set(x, y, false);
    }
}

/// One synthetic dropout pattern with a target density drawn log-uniformly
/// from `[0.001, 0.6]`, built from blobs, border bands, silhouette arcs and
/// speckle.
pub fn synthesize_mask(side: usize, rng: &mut ChaCha8Rng) -> NoiseMask {
    let target = (rng.gen_range(0.001f64.ln()..0.6f64.ln())).exp();
    let mut mask = NoiseMask::all_keep(side);
    let area = (side * side) as f64;
    let s = side as f64;
    for _ in 0..256 {
        let deficit = target - mask.dropout_fraction();
        if deficit <= 0.0 {
            break;
        }
        let missing = deficit * area;
        match rng.gen_range(0..10) {
            0..=3 => {
                let r = (missing / std::f64::consts::PI).sqrt() * rng.gen_range(0.3..1.0);
                let r = r.max(1.0);
                let aspect: f64 = rng.gen_range(0.3..1.0);
                erase_ellipse(
                    &mut mask,
                    rng.gen_range(0.0..s),
                    rng.gen_range(0.0..s),
                    r / aspect.sqrt(),
                    r * aspect.sqrt(),
                    rng.gen_range(0.0..std::f64::consts::PI),
                );
            }
            4..=5 => {
                let depth = (missing / s * rng.gen_range(0.3..1.0)).clamp(1.0, s / 2.0);
                erase_edge_band(&mut mask, depth, rng);
            }
            6..=7 => erase_contour(&mut mask, rng),
            _ => {
                let n = (missing * rng.gen_range(0.2..0.6)).ceil() as usize;
                erase_speckle(&mut mask, n.max(1), rng);
            }
        }
    }
    mask
}

/// Procedural stand-in for masks cut from real sensor sequences.
pub fn synthesize_patches(count: usize, side: usize, seed: u64) -> GroupedPatches {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = (0..count).map(|_| synthesize_mask(side, &mut rng)).collect();
    GroupedPatches::bin(masks)
}
