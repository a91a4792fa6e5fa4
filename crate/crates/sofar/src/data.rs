//! Dataset files: CIFAR binary batches and IDX image/label pairs.
//!
//! Pixels map to `[-1, 1]` via `x / 127.5 - 1`. IDX images are grayscale
//! and are replicated over three channels so that the same stems apply.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sofar_core::train::ImageSet;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const DATA_DIR_VAR: &str = "SOFAR_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: truncated after {records} complete records ({trailing} trailing bytes of {record})")]
    Truncated { path: PathBuf, records: usize, trailing: usize, record: usize },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error(transparent)]
    Set(#[from] sofar_core::train::DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    CifarBinary,
    Idx,
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Resolves `path` as given, or under `$SOFAR_DATA_DIR` when it is relative
/// and missing.
pub fn resolve(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_VAR) {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

fn pixel(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Parses concatenated CIFAR records: one label byte, then a 3×32×32 image
/// stored channel-major.
pub fn parse_cifar(path: &Path, bytes: &[u8], classes: usize) -> Result<ImageSet, DataError> {
    let records = bytes.len() / CIFAR_RECORD;
    let trailing = bytes.len() % CIFAR_RECORD;
    if trailing != 0 {
        return Err(DataError::Truncated { path: path.into(), records, trailing, record: CIFAR_RECORD });
    }
    let mut labels = Vec::with_capacity(records);
    let mut images = Vec::with_capacity(records * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(u32::from(rec[0]));
        images.extend(rec[1..].iter().map(|&b| pixel(b)));
    }
    Ok(ImageSet::new([3, CIFAR_SIDE, CIFAR_SIDE], images, labels, classes)?)
}

pub fn load_cifar(path: &Path, classes: usize) -> Result<ImageSet, DataError> {
    let path = resolve(path);
    parse_cifar(&path, &read(&path)?, classes)
}

fn be_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Malformed { path: path.into(), detail: "header ends early".into() })
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = be_u32(path, bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { path: path.into(), found, expected });
    }
    Ok(())
}

/// Parses an IDX rank-3 `u8` image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(path, bytes, IDX_IMAGES_MAGIC)?;
    let dim = |i: usize| be_u32(path, bytes, 4 + 4 * i).map(|v| v as usize);
    let (n, rows, cols) = (dim(0)?, dim(1)?, dim(2)?);
    let body = &bytes[16..];
    let item = rows * cols;
    if item == 0 {
        return Err(DataError::Malformed { path: path.into(), detail: "zero-sized images".into() });
    }
    if body.len() < n * item {
        return Err(DataError::Truncated {
            path: path.into(),
            records: body.len() / item,
            trailing: body.len() % item,
            record: item,
        });
    }
    Ok((n, rows, cols, body[..n * item].to_vec()))
}

/// Parses an IDX rank-1 `u8` label file.
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u32>, DataError> {
    check_magic(path, bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(path, bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(DataError::Truncated { path: path.into(), records: body.len(), trailing: 0, record: 1 });
    }
    Ok(body[..n].iter().map(|&b| u32::from(b)).collect())
}

pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<ImageSet, DataError> {
    let (images, labels) = (resolve(images), resolve(labels));
    let (n, rows, cols, pixels) = parse_idx_images(&images, &read(&images)?)?;
    let labels_v = parse_idx_labels(&labels, &read(&labels)?)?;
    if labels_v.len() != n {
        return Err(DataError::Malformed { path: labels, detail: format!("{} labels for {n} images", labels_v.len()) });
    }
    let item = rows * cols;
    let mut data = Vec::with_capacity(3 * n * item);
    for img in pixels.chunks_exact(item) {
        for _ in 0..3 {
            data.extend(img.iter().map(|&b| pixel(b)));
        }
    }
    Ok(ImageSet::new([3, rows, cols], data, labels_v, classes)?)
}

/// Serializes labelled 32×32 RGB byte images as CIFAR records.
pub fn write_cifar(path: &Path, images: &[[u8; CIFAR_RECORD - 1]], labels: &[u8]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for (img, &label) in images.iter().zip(labels) {
        out.push(label);
        out.extend_from_slice(img);
    }
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io)
}

/// Class-conditional toy images: each class is a tinted sinusoidal grating,
/// drawn at a random cyclic shift with additive noise. Templates depend only
/// on `classes`, so train and test files written with different seeds share
/// them.
pub fn synthesize(n: usize, classes: usize, seed: u64) -> (Vec<[u8; CIFAR_RECORD - 1]>, Vec<u8>) {
    const S: usize = CIFAR_SIDE;
    let mut trng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + classes as u64);
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            let (fx, fy) = (trng.gen_range(0.5..3.0f32), trng.gen_range(0.5..3.0f32));
            let tint: [f32; 3] = [trng.gen_range(-1.0..1.0), trng.gen_range(-1.0..1.0), trng.gen_range(-1.0..1.0)];
            let mut t = vec![0.0; 3 * S * S];
            for (c, tint) in tint.iter().enumerate() {
                for y in 0..S {
                    for x in 0..S {
                        let phase = (x as f32 * fx + y as f32 * fy) * std::f32::consts::PI / 8.0;
                        t[(c * S + y) * S + x] = 0.6 * phase.sin() + 0.5 * tint;
                    }
                }
            }
            t
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..classes);
        let (dy, dx) = (rng.gen_range(0..S), rng.gen_range(0..S));
        let mut img = [0u8; CIFAR_RECORD - 1];
        for c in 0..3 {
            for y in 0..S {
                for x in 0..S {
                    let v = templates[class][(c * S + (y + dy) % S) * S + (x + dx) % S] + rng.gen_range(-0.8..0.8f32);
                    img[(c * S + y) * S + x] = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
                }
            }
        }
        images.push(img);
        labels.push(class as u8);
    }
    (images, labels)
}
