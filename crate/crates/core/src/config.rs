//! JSON run configuration shared by every command.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::block_search::BlockSearchConfig;
use crate::data::{load_cifar, synth_dataset, split, CifarPart, CifarVariant, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::evo_search::{EvoConfig, SurrogateEvaluator, TrainSettings};

/// Environment variable consulted when `dataset.root` is unset.
pub const DATA_DIR_ENV: &str = "EGDARTS_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synth,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(Self::Cifar10),
            "cifar100" => Ok(Self::Cifar100),
            "synth" => Ok(Self::Synth),
            _ => Err(Error::config("dataset.kind", format!("unknown dataset `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub samples: usize,
    pub test_samples: usize,
    pub classes: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            test_samples: 1000,
            classes: 4,
            size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding the binary CIFAR files.
    pub root: Option<PathBuf>,
    /// Keep only the first `n` training images.
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
    pub synth: SynthSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Cifar10,
            root: None,
            max_train: None,
            max_test: None,
            synth: SynthSpec::default(),
        }
    }
}

impl DatasetConfig {
    fn root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.root {
            return Ok(r.clone());
        }
        std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| Error::Data {
            path: PathBuf::from(format!("${DATA_DIR_ENV}")),
            reason: format!("no dataset root: set dataset.root or {DATA_DIR_ENV}"),
        })
    }

    fn variant(&self) -> Option<CifarVariant> {
        match self.kind {
            DatasetKind::Cifar10 => Some(CifarVariant::C10),
            DatasetKind::Cifar100 => Some(CifarVariant::C100),
            DatasetKind::Synth => None,
        }
    }

    pub fn load(&self, part: CifarPart) -> Result<Dataset> {
        let data = match self.variant() {
            None => {
                let s = &self.synth;
                let (n, seed) = match part {
                    CifarPart::Train => (s.samples, s.seed),
                    CifarPart::Test => (s.test_samples, s.seed.wrapping_add(1)),
                };
                synth_dataset(seed, n, s.classes, s.size)?
            }
            Some(v) => {
                let root = self.root()?;
                // accept either the extracted archive folder or its parent
                let nested = root.join(v.archive_dir());
                let dir = if nested.is_dir() { nested } else { root };
                load_cifar(&dir, v, part, Some(&v.default_normalization()))?
            }
        };
        let limit = match part {
            CifarPart::Train => self.max_train,
            CifarPart::Test => self.max_test,
        };
        Ok(match limit {
            Some(n) if n < data.len() => data.subset(&(0..n).collect::<Vec<_>>()),
            _ => data,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DatasetKind::Synth {
            let s = &self.synth;
            if s.classes < 2 || s.size < 8 || s.samples < 2 * s.classes || s.test_samples < 2 {
                return Err(Error::config("dataset.synth", "need >= 2 classes, size >= 8 and 2 samples per class"));
            }
        }
        for (name, v) in [("max_train", self.max_train), ("max_test", self.max_test)] {
            if v.is_some_and(|n| n < 2) {
                return Err(Error::config(format!("dataset.{name}"), "must be at least 2"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Trained,
    Surrogate,
}

impl FromStr for EvaluatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" => Ok(Self::Trained),
            "surrogate" => Ok(Self::Surrogate),
            _ => Err(Error::config("evaluator.kind", format!("unknown evaluator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorConfig {
    pub kind: EvaluatorKind,
    /// Short training used to score each genome.
    pub train: TrainSettings,
    /// Split of the training set into fitting and scoring halves.
    pub split: SplitSpec,
    pub surrogate_scale: f64,
    pub surrogate_depth_penalty: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        let s = SurrogateEvaluator::default();
        Self {
            kind: EvaluatorKind::Trained,
            train: TrainSettings::default(),
            split: SplitSpec::default(),
            surrogate_scale: s.scale,
            surrogate_depth_penalty: s.depth_penalty,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecideConfig {
    /// Fail instead of falling back to an anchor when no member lies below
    /// the chord or the front has a single member.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub block_search: BlockSearchConfig,
    pub evolution: EvoConfig,
    pub evaluator: EvaluatorConfig,
    /// Final training of a chosen genome.
    pub train: TrainSettings,
    pub decide: DecideConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            block_search: BlockSearchConfig::default(),
            evolution: EvoConfig::default(),
            evaluator: EvaluatorConfig::default(),
            train: TrainSettings {
                epochs: 600,
                ..TrainSettings::default()
            },
            decide: DecideConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.block_search.validate("block_search")?;
        self.evolution.validate("evolution")?;
        self.evaluator.train.validate("evaluator.train")?;
        self.evaluator.split.validate()?;
        if !(self.evaluator.surrogate_scale > 0.0 && self.evaluator.surrogate_scale.is_finite()) {
            return Err(Error::config("evaluator.surrogate_scale", "must be > 0"));
        }
        if !(self.evaluator.surrogate_depth_penalty >= 0.0 && self.evaluator.surrogate_depth_penalty.is_finite()) {
            return Err(Error::config("evaluator.surrogate_depth_penalty", "must be >= 0"));
        }
        self.train.validate("train")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Training set split into (fitting, scoring) halves for the evaluator.
    pub fn evaluator_split(&self, train: &Dataset) -> Result<(Dataset, Dataset)> {
        split(train, &self.evaluator.split)
    }
}
