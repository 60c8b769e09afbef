//! Declarative experiment configuration and its content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Subset, DEFAULT_HD_LOW_QUALITY_DIRS};
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_K_MAX, DEFAULT_SPLITS};
use crate::model::{FeatureKind, ModelConfig, PretrainedConfig, StubConfig, VisionConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub subset: Subset,
    /// Image directory (11k) or the per-identity directory tree (HD).
    pub root: PathBuf,
    /// Per-image metadata table; required for the 11k subsets.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    /// HD subdirectories whose images are gallery distractors.
    #[serde(default = "default_low_quality_dirs")]
    pub low_quality_dirs: Vec<String>,
}

fn default_low_quality_dirs() -> Vec<String> {
    DEFAULT_HD_LOW_QUALITY_DIRS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Vit,
    Resnet,
    Stub,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vit" | "vision-transformer" => Ok(BackboneKind::Vit),
            "resnet" | "residual-cnn" => Ok(BackboneKind::Resnet),
            "stub" => Ok(BackboneKind::Stub),
            other => Err(Error::Config(format!("unknown backbone {other:?} (vit, resnet or stub)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Architecture description of converted pretrained weights.
    pub config: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub stub: StubConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { kind: BackboneKind::Stub, config: None, weights: None, stub: StubConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub n_splits: usize,
    pub k_max: usize,
    pub features: FeatureKind,
    pub batch_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_splits: DEFAULT_SPLITS,
            k_max: DEFAULT_K_MAX,
            features: FeatureKind::PostBn,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub partition: u64,
    pub splits: u64,
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub subset: Option<Subset>,
    pub backbone: Option<BackboneKind>,
    pub output_dir: Option<PathBuf>,
    pub partition_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub training_seed: Option<u64>,
    pub epochs: Option<usize>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.dataset.root);
        rebase(base, &mut cfg.output_dir);
        for p in [&mut cfg.dataset.metadata, &mut cfg.backbone.config, &mut cfg.backbone.weights].into_iter().flatten()
        {
            rebase(base, p);
        }
        Ok(cfg)
    }

    /// Applies overrides and propagates the named seeds to the components
    /// that consume them.
    pub fn resolve(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.subset {
            self.dataset.subset = s;
        }
        if let Some(b) = o.backbone {
            self.backbone.kind = b;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = o.partition_seed {
            self.seeds.partition = s;
        }
        if let Some(s) = o.split_seed {
            self.seeds.splits = s;
        }
        if let Some(s) = o.training_seed {
            self.seeds.training = s;
        }
        if let Some(e) = o.epochs {
            self.train.schedule.total_epochs = e;
        }
        self.train.seed = self.seeds.training;
        self.model.init_seed = self.seeds.training;
        self.evaluation.n_splits = self.evaluation.n_splits.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::MissingPath(p.to_path_buf()))
            }
        };
        exists(&self.dataset.root)?;
        if self.dataset.subset != Subset::Hd {
            let meta = self
                .dataset
                .metadata
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.metadata is required for the 11k subsets".into()))?;
            exists(meta)?;
        }
        match self.backbone.kind {
            BackboneKind::Stub => {}
            kind => {
                let (Some(c), Some(w)) = (&self.backbone.config, &self.backbone.weights) else {
                    return Err(Error::Config("pretrained backbones need backbone.config and backbone.weights".into()));
                };
                exists(c)?;
                exists(w)?;
                let vision = PretrainedConfig::read(c)?.vision;
                let matches = matches!(
                    (kind, &vision),
                    (BackboneKind::Vit, VisionConfig::Vit { .. }) | (BackboneKind::Resnet, VisionConfig::Resnet { .. })
                );
                if !matches {
                    return Err(Error::Config(format!("backbone.kind {kind:?} does not match {}", c.display())));
                }
            }
        }
        self.train.validate()
    }

    /// Hex SHA-256 of the resolved config. The output directory is left out
    /// so a run can be moved without invalidating its artifacts.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
