use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::instances_by_class;
use super::HarnessError;

/// Leave-one-instance-out split: one held-out instance per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// `held_out[class]` is the test instance of that class.
    pub held_out: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_test(&self, class: usize, instance: usize) -> bool {
        self.held_out.get(class) == Some(&instance)
    }

    /// Sample indices on the training and test side.
    pub fn partition(&self, labels: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &(c, inst)) in labels.iter().enumerate() {
            if self.is_test(c, inst) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Data(e.to_string()))?;
        fs::write(path, json).map_err(HarnessError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }

    pub fn write_all(splits: &[SplitSpec], path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(splits).map_err(|e| HarnessError::Data(e.to_string()))?;
        fs::write(path, json).map_err(HarnessError::io(path))
    }

    /// Accepts either a single split object or an array of splits.
    pub fn read_all(path: &Path) -> Result<Vec<Self>, HarnessError> {
        let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let err = |e: serde_json::Error| HarnessError::Data(format!("{}: {e}", path.display()));
        if text.trim_start().starts_with('[') {
            serde_json::from_str(&text).map_err(err)
        } else {
            serde_json::from_str(&text).map(|s| vec![s]).map_err(err)
        }
    }
}

/// `n_splits` leave-one-out splits over `(class, instance)` labels. Each
/// class's instances are shuffled once and split `s` holds out entry
/// `s mod count`, so every split uses a uniformly drawn instance and the
/// splits stay distinct as long as some class has enough instances.
pub fn make_splits(
    labels: &[(usize, usize)],
    classes: usize,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<SplitSpec>, HarnessError> {
    if n_splits == 0 {
        return Err(HarnessError::Config("need at least one split".into()));
    }
    let by_class = instances_by_class(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orders = Vec::with_capacity(classes);
    for class in 0..classes {
        let mut inst = by_class.get(&class).cloned().unwrap_or_default();
        if inst.len() < 2 {
            return Err(HarnessError::TooFewInstances { class, found: inst.len() });
        }
        inst.shuffle(&mut rng);
        orders.push(inst);
    }
    Ok((0..n_splits)
        .map(|s| SplitSpec {
            held_out: orders.iter().map(|o| o[s % o.len()]).collect(),
            seed,
        })
        .collect())
}
