use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::encoding::{DepthImage, EncodedImage};
use crate::imageio::{load_depth_png, load_rgb_png, save_depth_png, save_rgb_png};

/// One RGB/depth frame pair of an object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: EncodedImage,
    pub depth: DepthImage,
    pub class: usize,
    /// Dataset-wide instance id; each belongs to exactly one class.
    pub instance: usize,
}

/// In-memory labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: Vec<String>,
    samples: Vec<Sample>,
}

fn check_labels<'a>(
    classes: usize,
    labels: impl Iterator<Item = (usize, usize)> + 'a,
) -> Result<(), HarnessError> {
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (class, instance) in labels {
        if class >= classes {
            return Err(HarnessError::Data(format!("class id {class} outside 0..{classes}")));
        }
        let prev = *owner.entry(instance).or_insert(class);
        if prev != class {
            return Err(HarnessError::Data(format!(
                "instance {instance} appears under classes {prev} and {class}"
            )));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(classes: Vec<String>, samples: Vec<Sample>) -> Result<Self, HarnessError> {
        if classes.is_empty() {
            return Err(HarnessError::Config("a dataset needs at least one class".into()));
        }
        check_labels(classes.len(), samples.iter().map(|s| (s.class, s.instance)))?;
        for (i, s) in samples.iter().enumerate() {
            if (s.rgb.width(), s.rgb.height()) != (s.depth.width(), s.depth.height()) {
                return Err(HarnessError::Data(format!(
                    "sample {i}: rgb is {}x{} but depth is {}x{}",
                    s.rgb.width(),
                    s.rgb.height(),
                    s.depth.width(),
                    s.depth.height()
                )));
            }
        }
        Ok(Self { classes, samples })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(class, instance)` per sample.
    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.samples.iter().map(|s| (s.class, s.instance)).collect()
    }

    /// Writes `rgb/NNNNN.png`, `depth/NNNNN.png`, `manifest.jsonl` and
    /// `classes.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest, HarnessError> {
        for sub in ["rgb", "depth"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(HarnessError::io(&p))?;
        }
        let mut entries = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let rgb = format!("rgb/{i:05}.png");
            let depth = format!("depth/{i:05}.png");
            save_rgb_png(&s.rgb, &dir.join(&rgb))?;
            save_depth_png(&s.depth, &dir.join(&depth))?;
            entries.push(ManifestEntry { rgb, depth, class: s.class, instance: s.instance });
        }
        let manifest = DatasetManifest {
            root: dir.to_path_buf(),
            entries,
            classes: self.classes.clone(),
        };
        manifest.write(&dir.join(DatasetManifest::FILE_NAME))?;
        Ok(manifest)
    }

    /// Loads every entry; `stride` keeps every n-th frame of each instance.
    pub fn load(manifest: &DatasetManifest, stride: usize) -> Result<Self, HarnessError> {
        if stride == 0 {
            return Err(HarnessError::Config("frame stride must be positive".into()));
        }
        manifest.validate()?;
        let mut seen: HashMap<usize, usize> = HashMap::new();
        let mut samples = Vec::new();
        for e in &manifest.entries {
            let n = seen.entry(e.instance).or_insert(0);
            *n += 1;
            if !(*n - 1).is_multiple_of(stride) {
                continue;
            }
            samples.push(Sample {
                rgb: load_rgb_png(&manifest.resolve(&e.rgb))?,
                depth: load_depth_png(&manifest.resolve(&e.depth))?,
                class: e.class,
                instance: e.instance,
            });
        }
        Self::new(manifest.classes.clone(), samples)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            classes: self.classes.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rgb: String,
    pub depth: String,
    pub class: usize,
    pub instance: usize,
}

/// A JSON-lines manifest plus class names. Relative paths are resolved
/// against `root`, the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub classes: Vec<String>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.jsonl";
    pub const CLASSES_FILE: &'static str = "classes.txt";

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Reads the manifest and, if present, `classes.txt` next to it (one
    /// name per line). Without it classes are named `class0`, `class1`, ...
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let file = fs::File::open(path).map_err(HarnessError::io(path))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(HarnessError::io(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                HarnessError::Data(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let names = root.join(Self::CLASSES_FILE);
        let classes = if names.exists() {
            fs::read_to_string(&names)
                .map_err(HarnessError::io(&names))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            let m = entries.iter().map(|e| e.class + 1).max().unwrap_or(0);
            (0..m).map(|k| format!("class{k}")).collect()
        };
        let manifest = Self { root, entries, classes };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the JSON-lines file and `classes.txt` beside it.
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let file = fs::File::create(path).map_err(HarnessError::io(path))?;
        let mut out = BufWriter::new(file);
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| HarnessError::Data(e.to_string()))?;
            writeln!(out, "{line}").map_err(HarnessError::io(path))?;
        }
        out.flush().map_err(HarnessError::io(path))?;
        let names = path.parent().unwrap_or(Path::new(".")).join(Self::CLASSES_FILE);
        let mut text = self.classes.join("\n");
        text.push('\n');
        fs::write(&names, text).map_err(HarnessError::io(&names))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.entries.is_empty() {
            return Err(HarnessError::Data("manifest has no entries".into()));
        }
        check_labels(self.classes.len(), self.entries.iter().map(|e| (e.class, e.instance)))
    }

    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.class, e.instance)).collect()
    }

    /// Instances per class, sorted.
    pub fn instances(&self) -> BTreeMap<usize, Vec<usize>> {
        instances_by_class(&self.labels())
    }
}

pub(crate) fn instances_by_class(labels: &[(usize, usize)]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(c, i) in labels {
        let v = map.entry(c).or_default();
        if !v.contains(&i) {
            v.push(i);
        }
    }
    for v in map.values_mut() {
        v.sort_unstable();
    }
    map
}
