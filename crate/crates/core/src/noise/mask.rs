use serde::{Deserialize, Serialize};

use super::NoiseError;

/// Square binary dropout pattern. A set bit keeps the pixel, a clear bit
/// erases it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NoiseMask {
    side: usize,
    words: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeOp {
    /// Union of the two dropout sets.
    Add,
    /// Dropout of the first mask with the second mask's dropout removed.
    Subtract,
}

impl NoiseMask {
    pub fn all_keep(side: usize) -> Self {
        let len = side * side;
        let mut words = vec![u64::MAX; len.div_ceil(64)];
        let tail = len % 64;
        if tail != 0 {
            *words.last_mut().unwrap() = (1u64 << tail) - 1;
        }
        Self { side, words }
    }

    pub fn all_erase(side: usize) -> Self {
        Self { side, words: vec![0; (side * side).div_ceil(64)] }
    }

    /// Builds a mask from a keep predicate over `(x, y)`.
    pub fn from_fn(side: usize, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::all_erase(side);
        for y in 0..side {
            for x in 0..side {
                if keep(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn from_bits(side: usize, bits: &[bool]) -> Result<Self, NoiseError> {
        if bits.len() != side * side {
            return Err(NoiseError::SizeMismatch { expected: side * side, actual: bits.len() });
        }
        Ok(Self::from_fn(side, |x, y| bits[y * side + x]))
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn keep_at_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn keep(&self, x: usize, y: usize) -> bool {
        self.keep_at_index(y * self.side + x)
    }

    pub fn set(&mut self, x: usize, y: usize, keep: bool) {
        let i = y * self.side + x;
        if keep {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(|i| self.keep_at_index(i))
    }

    pub fn dropout_count(&self) -> usize {
        self.len() - self.words.iter().map(|w| w.count_ones() as usize).sum::<usize>()
    }

    pub fn dropout_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.dropout_count() as f64 / self.len() as f64
        }
    }

    fn clear_tail(&mut self) {
        let tail = self.len() % 64;
        if tail != 0 {
            *self.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
    }

    pub fn inverted(&self) -> Self {
        let mut out = Self { side: self.side, words: self.words.iter().map(|w| !w).collect() };
        out.clear_tail();
        out
    }

    /// Run lengths of alternating keep/erase values, starting with a (possibly
    /// empty) keep run.
    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = true;
        let mut count = 0u32;
        for bit in self.bits() {
            if bit == current {
                count += 1;
            } else {
                runs.push(count);
                current = bit;
                count = 1;
            }
        }
        runs.push(count);
        runs
    }

    pub fn from_runs(side: usize, runs: &[u32]) -> Result<Self, NoiseError> {
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if total != (side * side) as u64 {
            return Err(NoiseError::SizeMismatch { expected: side * side, actual: total as usize });
        }
        let mut mask = Self::all_erase(side);
        let mut pos = 0usize;
        for (k, &run) in runs.iter().enumerate() {
            let run = run as usize;
            if k % 2 == 0 {
                for i in pos..pos + run {
                    mask.words[i / 64] |= 1 << (i % 64);
                }
            }
            pos += run;
        }
        Ok(mask)
    }
}

/// Combines two masks on their dropout indicators, then optionally inverts.
pub fn compose_masks(
    a: &NoiseMask,
    b: &NoiseMask,
    op: ComposeOp,
    invert: bool,
) -> Result<NoiseMask, NoiseError> {
    if a.side != b.side {
        return Err(NoiseError::SizeMismatch { expected: a.len(), actual: b.len() });
    }
    // keep = !dropout; add: !(Da | Db) = Ka & Kb; subtract: !(Da & !Db) = Ka | !Kb
    let words = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(&ka, &kb)| match op {
            ComposeOp::Add => ka & kb,
            ComposeOp::Subtract => ka | !kb,
        })
        .map(|w| if invert { !w } else { w })
        .collect();
    let mut out = NoiseMask { side: a.side, words };
    out.clear_tail();
    Ok(out)
}
