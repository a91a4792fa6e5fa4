//! TOML run configuration.
//!
//! ```toml
//! out_dir = "runs/toy"
//!
//! [model]
//! name = "RF-c3d4 ResNet21(50)"   # or an inline [model.spec] table
//! dataset = "cifar"
//! num_classes = 10
//!
//! [data]
//! format = "cifar_binary"
//! train = "train.bin"
//! val = "test.bin"
//!
//! [train]
//! phase = "pretrain_fp"
//! ...
//! ```
//!
//! Unknown keys are rejected. Every run writes the resolved configuration,
//! with the architecture expanded to a spec, to `run.toml` in `out_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sofar_core::arch::{parse_arch_name, ArchError, ArchSpec, Dataset};
use sofar_core::train::{ImageSet, TrainConfig, TrainError};

use crate::data::{self, DataError, Format};

pub const RESOLVED_NAME: &str = "run.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("[model] needs exactly one of `name` or `spec`")]
    ModelChoice,
    #[error("{0}")]
    Arch(#[from] ArchError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Write(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Checkpoint whose weights initialize the run (finetuning).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// Write wall-clock seconds to the metrics CSV. Off gives byte-identical
    /// CSVs across reruns.
    #[serde(default = "yes")]
    pub record_seconds: bool,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ArchSpec>,
    /// Dataset layout for `name`; defaults to CIFAR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_resolution: Option<usize>,
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<ArchSpec, ConfigError> {
        let mut spec = match (&self.name, &self.spec) {
            (Some(name), None) => parse_arch_name(name, self.dataset.unwrap_or(Dataset::Cifar))?,
            (None, Some(spec)) => spec.clone(),
            _ => return Err(ConfigError::ModelChoice),
        };
        if let Some(n) = self.num_classes {
            spec.num_classes = n;
        }
        if let Some(r) = self.input_resolution {
            spec.input_resolution = r;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub format: Format,
    /// CIFAR batch file, or IDX image file.
    pub train: PathBuf,
    /// IDX label file for `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_labels: Option<PathBuf>,
    /// Use only the first `limit` training items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_limit: Option<usize>,
    /// Label range; defaults to the model's class count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

/// Loads one dataset file (plus labels for IDX).
pub fn load_set(format: Format, path: &Path, labels: Option<&Path>, classes: usize) -> Result<ImageSet, DataError> {
    match format {
        Format::CifarBinary => data::load_cifar(path, classes),
        Format::Idx => {
            let labels = labels.ok_or_else(|| DataError::Malformed {
                path: path.to_path_buf(),
                detail: "IDX images need a label file".into(),
            })?;
            data::load_idx(path, labels, classes)
        }
    }
}

impl DataConfig {
    pub fn load(&self, classes: usize) -> Result<(ImageSet, Option<ImageSet>), DataError> {
        let classes = self.classes.unwrap_or(classes);
        let mut train = load_set(self.format, &self.train, self.train_labels.as_deref(), classes)?;
        if let Some(n) = self.limit {
            train = train.take(n);
        }
        let val = match &self.val {
            None => None,
            Some(p) => {
                let v = load_set(self.format, p, self.val_labels.as_deref(), classes)?;
                Some(match self.val_limit {
                    Some(n) => v.take(n),
                    None => v,
                })
            }
        };
        Ok((train, val))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// TOML text that parses back to exactly `self`. Values that came from
    /// `f32` fields are written in their shortest `f32` form rather than as
    /// the widened `f64`. Fails for integers beyond `i64::MAX`, which TOML
    /// cannot hold.
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        let mut value = toml::Value::try_from(self)?;
        shorten_floats(&mut value);
        let text = toml::to_string(&value)?;
        match RunConfig::parse(&text) {
            Ok(back) if back == *self => Ok(text),
            _ => toml::to_string(self),
        }
    }

    /// Checks everything that does not need the filesystem and returns the
    /// same config with the architecture expanded to a spec.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let spec = self.model.resolve()?;
        self.train.validate()?;
        if self.data.format == Format::Idx && self.data.train_labels.is_none() {
            return Err(ConfigError::Invalid("[data] format = \"idx\" needs train_labels".into()));
        }
        if self.data.val.is_some() && self.data.format == Format::Idx && self.data.val_labels.is_none() {
            return Err(ConfigError::Invalid("[data] format = \"idx\" needs val_labels".into()));
        }
        let mut out = self.clone();
        out.model =
            ModelConfig { name: None, spec: Some(spec), dataset: None, num_classes: None, input_resolution: None };
        Ok(out)
    }

    pub fn arch(&self) -> Result<ArchSpec, ConfigError> {
        self.model.resolve()
    }
}

fn shorten_floats(v: &mut toml::Value) {
    match v {
        toml::Value::Float(f) => {
            let narrow = *f as f32;
            if f64::from(narrow) == *f {
                *f = narrow.to_string().parse().expect("f32 display parses");
            }
        }
        toml::Value::Array(items) => items.iter_mut().for_each(shorten_floats),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| shorten_floats(v)),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
out_dir = "out"
[model]
name = "RF-c3d4 ResNet21(50)"
num_classes = 10
[data]
format = "cifar_binary"
train = "train.bin"
[train]
phase = "pretrain_fp"
epochs = 2
batch_size = 8
seed = 1
optimizer = { kind = "sgd_momentum", momentum = 0.9, weight_decay = 1e-4 }
schedule = { kind = "cosine", lr = 0.005 }
"#;

    #[test]
    fn parse_and_resolve() {
        let c = RunConfig::parse(TEXT).unwrap();
        assert!(c.record_seconds);
        let r = c.resolve().unwrap();
        let spec = r.model.spec.as_ref().unwrap();
        assert_eq!(spec.num_classes, 10);
        let text = r.to_toml().unwrap();
        assert!(text.contains("lr = 0.005\n"), "{text}");
        assert_eq!(RunConfig::parse(&text).unwrap(), r);
        assert_eq!(r.resolve().unwrap(), r);
        let mut big = r.clone();
        big.train.seed = u64::MAX;
        assert!(big.to_toml().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse(&format!("{TEXT}\nbogus = 1")), Err(ConfigError::Parse(_))));
        let t = TEXT.replace("num_classes = 10", "num_classes = 10\ncolour = 3");
        assert!(RunConfig::parse(&t).is_err());
    }

    #[test]
    fn model_choice() {
        let t = TEXT.replace("name = \"RF-c3d4 ResNet21(50)\"", "");
        assert!(matches!(RunConfig::parse(&t).unwrap().resolve(), Err(ConfigError::ModelChoice)));
    }
}
