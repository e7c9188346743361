//! Parameter checkpoints.
//!
//! ```text
//! magic        b"FUSNETCK"
//! version      u32 LE
//! json length  u64 LE
//! architecture JSON (UTF-8)
//! parameters   f32 LE, tensor by tensor in declaration order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionArch, FusionNet, NnError, StreamArch, StreamNet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FUSNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Stream(StreamArch),
    Fusion(FusionArch),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Stream(StreamNet),
    Fusion(FusionNet),
}

impl Network {
    pub fn architecture(&self) -> Architecture {
        match self {
            Self::Stream(s) => Architecture::Stream(s.arch().clone()),
            Self::Fusion(f) => Architecture::Fusion(f.arch()),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Self::Stream(s) => s.params(),
            Self::Fusion(f) => f.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Self::Stream(s) => s.params_mut(),
            Self::Fusion(f) => f.params_mut(),
        }
    }
}

fn err(m: impl Into<String>) -> NnError {
    NnError::Checkpoint(m.into())
}

pub fn checkpoint_bytes(net: &Network) -> Result<Vec<u8>, NnError> {
    let json = serde_json::to_vec(&net.architecture()).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        for &v in p.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Network, NnError> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let json_end = usize::try_from(json_len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err("truncated architecture"))?;
    let arch: Architecture =
        serde_json::from_slice(&bytes[20..json_end]).map_err(|e| err(e.to_string()))?;
    let mut net = match arch {
        Architecture::Stream(a) => Network::Stream(StreamNet::new(a, 0)?),
        Architecture::Fusion(a) => Network::Fusion(FusionNet::from_arch(&a, 0)?),
    };
    let mut raw = bytes[json_end..].chunks_exact(4);
    if raw.len() * 4 != bytes.len() - json_end {
        return Err(err("parameter block is not a whole number of f32 values"));
    }
    let expected: usize = net.params().iter().map(|p| p.len()).sum();
    if raw.len() != expected {
        return Err(err(format!("expected {expected} parameters, found {}", raw.len())));
    }
    for p in net.params_mut() {
        for v in p.data_mut() {
            let b = raw.next().expect("count checked");
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
        }
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), NnError> {
    fs::write(path, checkpoint_bytes(net)?).map_err(|e| err(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Network, NnError> {
    parse_checkpoint(&fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?)
}
