//! On-disk mask library.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   b"RGBDMASK"
//! version u32
//! side    u32
//! count   u64
//! seed    u64
//! count x { runs: u32, run lengths: runs x u32 }
//! ```
//!
//! Run lengths alternate keep/erase starting with a keep run (which may be
//! zero). Group boundaries and the composition log live in a JSON sidecar
//! next to the binary file (`<path>.json`).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompositionRecord, DensityGroups, MaskLibrary, MaskSource, NoiseError, NoiseMask};

pub const MAGIC: &[u8; 8] = b"RGBDMASK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySidecar {
    pub version: u32,
    pub side: usize,
    pub source: MaskSource,
    pub seed: u64,
    pub group_boundaries: DensityGroups,
    pub composition_log: Vec<CompositionRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn io(e: std::io::Error) -> NoiseError {
    NoiseError::Format(e.to_string())
}

pub fn write_library(lib: &MaskLibrary, path: &Path) -> Result<(), NoiseError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(lib.side as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&(lib.masks.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&lib.seed.to_le_bytes()).map_err(io)?;
    for mask in &lib.masks {
        let runs = mask.runs();
        out.write_all(&(runs.len() as u32).to_le_bytes()).map_err(io)?;
        for r in runs {
            out.write_all(&r.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;

    let sidecar = LibrarySidecar {
        version: VERSION,
        side: lib.side,
        source: lib.source,
        seed: lib.seed,
        group_boundaries: lib.groups.clone(),
        composition_log: lib.log.clone(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| NoiseError::Format(e.to_string()))?;
    fs::write(sidecar_path(path), json).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], NoiseError> {
        if self.bytes.len() < N {
            return Err(NoiseError::Format("truncated file".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, NoiseError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, NoiseError> {
        self.take::<8>().map(u64::from_le_bytes)
    }
}

/// Reads the binary file and, when present, its sidecar. Without a sidecar
/// the library gets equal-width groups, an empty log and `Imported` source.
pub fn read_library(path: &Path) -> Result<MaskLibrary, NoiseError> {
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    let mut r = Reader { bytes: &bytes };
    if &r.take::<8>()? != MAGIC {
        return Err(NoiseError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NoiseError::Format(format!("unsupported version {version}")));
    }
    let side = r.u32()? as usize;
    let count = r.u64()?;
    let seed = r.u64()?;
    let mut masks = Vec::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let runs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        masks.push(NoiseMask::from_runs(side, &runs)?);
    }
    if !r.bytes.is_empty() {
        return Err(NoiseError::Format("trailing bytes".into()));
    }

    let sidecar = sidecar_path(path);
    let (groups, source, log) = if sidecar.exists() {
        let text = fs::read(&sidecar).map_err(io)?;
        let meta: LibrarySidecar =
            serde_json::from_slice(&text).map_err(|e| NoiseError::Format(e.to_string()))?;
        if meta.side != side || meta.seed != seed {
            return Err(NoiseError::Format("sidecar does not match library header".into()));
        }
        let groups = DensityGroups::from_boundaries(*meta.group_boundaries.boundaries())?;
        (groups, meta.source, meta.composition_log)
    } else {
        (DensityGroups::equal_width(), MaskSource::Imported, Vec::new())
    };
    Ok(MaskLibrary { side, masks, groups, source, seed, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{build_library, synthesize_patches};

    #[test]
    fn round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.mask");
        let p = synthesize_patches(30, 24, 3);
        let lib = build_library(&p, 12, MaskSource::Synthetic, 99).unwrap();
        write_library(&lib, &path).unwrap();
        assert_eq!(read_library(&path).unwrap(), lib);

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"RGBDMASK");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 24);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 99);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mask");
        fs::write(&path, b"NOTAMASK\x01\x00\x00\x00").unwrap();
        assert!(read_library(&path).is_err());

        let p = synthesize_patches(10, 8, 3);
        let lib = build_library(&p, 2, MaskSource::Synthetic, 1).unwrap();
        write_library(&lib, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(read_library(&path).is_err());
    }
}
