//! Checkpoint files.
//!
//! ```text
//! "SOFA" | version: u32 LE | header_len: u32 LE | header (JSON) | payload
//! ```
//!
//! The header carries the architecture, phase, epoch, optimizer step and a
//! tensor directory of `{name, shape, offset, len}` entries; offsets are in
//! bytes from the start of the payload, which is raw little-endian `f32`.
//! Optimizer slots are stored as extra tensors named `<param>@first` and
//! `<param>@second`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sofar_core::arch::ArchSpec;
use sofar_core::train::{Checkpoint, OptimizerState, Phase};
use sofar_core::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"SOFA";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    Version(u32),
    #[error("checkpoint ends early: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint tensor '{0}': {1}")]
    Tensor(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch_name: String,
    arch: ArchSpec,
    phase: Phase,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    step: u64,
    /// Whether second-moment slots are present.
    second: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: [usize; 4],
    offset: usize,
    len: usize,
}

const FIRST: &str = "@first";
const SECOND: &str = "@second";

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors: Vec<(String, Shape, &[f32])> =
        ckpt.params.iter().map(|(n, t)| (n.clone(), t.shape(), t.data())).collect();
    if let Some(opt) = &ckpt.optimizer {
        for (slots, suffix) in [(&opt.first, FIRST), (&opt.second, SECOND)] {
            for ((name, t), slot) in ckpt.params.iter().zip(slots) {
                let shape = if slot.len() == t.numel() { t.shape() } else { Shape::new(1, 1, 1, slot.len()) };
                tensors.push((format!("{name}{suffix}"), shape, slot));
            }
        }
    }
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, shape, data)| {
            let e = Entry { name: name.clone(), shape: shape.0, offset, len: data.len() };
            offset += 4 * data.len();
            e
        })
        .collect();
    let header = Header {
        arch_name: ckpt.arch.name(),
        arch: ckpt.arch.clone(),
        phase: ckpt.phase,
        epoch: ckpt.epoch,
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerHeader { step: o.step, second: !o.second.is_empty() }),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take(bytes: &[u8], at: usize, n: usize) -> Result<&[u8], CheckpointError> {
    bytes.get(at..at + n).ok_or(CheckpointError::Truncated { need: at + n, have: bytes.len() })
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32, CheckpointError> {
    let b = take(bytes, at, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let magic = take(bytes, 0, 4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = u32_at(bytes, 8)? as usize;
    let header: Header = serde_json::from_slice(take(bytes, 12, header_len)?)?;
    let payload = &bytes[12 + header_len..];

    let mut params = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for e in &header.tensors {
        let raw = take(payload, e.offset, 4 * e.len)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if let Some(base) = e.name.strip_suffix(FIRST) {
            first.push((base.to_owned(), data));
        } else if let Some(base) = e.name.strip_suffix(SECOND) {
            second.push((base.to_owned(), data));
        } else {
            let t = Tensor::from_vec(Shape(e.shape), data)
                .map_err(|err| CheckpointError::Tensor(e.name.clone(), err.to_string()))?;
            params.push((e.name.clone(), t));
        }
    }
    let slots = |found: Vec<(String, Vec<f32>)>, what: &str| -> Result<Vec<Vec<f32>>, CheckpointError> {
        if found.len() != params.len() || found.iter().zip(&params).any(|((a, _), (b, _))| a != b) {
            return Err(CheckpointError::Tensor(
                what.into(),
                "optimizer slots do not follow the parameter list".into(),
            ));
        }
        Ok(found.into_iter().map(|(_, v)| v).collect())
    };
    let optimizer = match header.optimizer {
        None => None,
        Some(o) => Some(OptimizerState {
            step: o.step,
            first: slots(first, FIRST)?,
            second: if o.second { slots(second, SECOND)? } else { Vec::new() },
        }),
    };
    Ok(Checkpoint { arch: header.arch, phase: header.phase, epoch: header.epoch, params, optimizer })
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    Ok(write_atomic(path, &encode(ckpt))?)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}
