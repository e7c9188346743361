use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::{DensityGroups, GroupedPatches, GROUP_COUNT};
use super::{compose_masks, ComposeOp, NoiseError, NoiseMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Imported,
    Synthetic,
}

/// How one library mask was produced from the patch pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionRecord {
    pub group_a: usize,
    pub patch_a: usize,
    pub group_b: usize,
    pub patch_b: usize,
    pub op: ComposeOp,
    pub invert: bool,
}

/// Immutable set of final dropout patterns sampled during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLibrary {
    pub side: usize,
    pub masks: Vec<NoiseMask>,
    pub groups: DensityGroups,
    pub source: MaskSource,
    pub seed: u64,
    pub log: Vec<CompositionRecord>,
}

impl MaskLibrary {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Composes `k` masks, each from two patches of two distinct, uniformly
/// chosen non-empty density groups, a fair add/subtract choice and a fair
/// invert coin.
pub fn build_library(
    patches: &GroupedPatches,
    k: usize,
    source: MaskSource,
    seed: u64,
) -> Result<MaskLibrary, NoiseError> {
    let members: Vec<Vec<usize>> = (0..GROUP_COUNT).map(|g| patches.members(g)).collect();
    let non_empty: Vec<usize> = (0..GROUP_COUNT).filter(|&g| !members[g].is_empty()).collect();
    if k > 0 && non_empty.len() < 2 {
        return Err(NoiseError::InsufficientGroups(non_empty.len()));
    }
    let side = patches.side().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(k);
    let mut log = Vec::with_capacity(k);
    for _ in 0..k {
        let pair: Vec<usize> = non_empty.choose_multiple(&mut rng, 2).copied().collect();
        let (group_a, group_b) = (pair[0], pair[1]);
        let patch_a = *members[group_a].choose(&mut rng).expect("group is non-empty");
        let patch_b = *members[group_b].choose(&mut rng).expect("group is non-empty");
        let op = if rng.gen_bool(0.5) { ComposeOp::Add } else { ComposeOp::Subtract };
        let invert = rng.gen_bool(0.5);
        masks.push(compose_masks(&patches.masks[patch_a], &patches.masks[patch_b], op, invert)?);
        log.push(CompositionRecord { group_a, patch_a, group_b, patch_b, op, invert });
    }
    Ok(MaskLibrary { side, masks, groups: patches.boundaries.clone(), source, seed, log })
}
