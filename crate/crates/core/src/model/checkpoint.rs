//! Versioned checkpoint container: a safetensors file holding the trainable
//! and buffer parameters (plus optional optimizer moments), with a JSON
//! metadata record in the header.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::network::HandIdModel;
use super::params::{tensor_bytes, ParamGroup};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const META_KEY: &str = "handid";
const MODEL_PREFIX: &str = "model.";
const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub backbone: String,
    pub template: String,
    pub num_classes: usize,
    pub config_hash: String,
    /// Number of completed epochs.
    pub epochs_completed: usize,
    pub optimizer_steps: u64,
    pub val_rank1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Model parameters keyed by parameter name.
    pub model: HashMap<String, Tensor>,
    /// Optimizer state keyed by `<slot>.<parameter name>`.
    pub optimizer: HashMap<String, Tensor>,
}

fn to_safetensors_dtype(dtype: DType) -> Result<Dtype> {
    match dtype {
        DType::F32 => Ok(Dtype::F32),
        DType::F64 => Ok(Dtype::F64),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn from_safetensors_dtype(dtype: Dtype) -> Result<DType> {
    match dtype {
        Dtype::F32 => Ok(DType::F32),
        Dtype::F64 => Ok(DType::F64),
        Dtype::F16 => Ok(DType::F16),
        Dtype::BF16 => Ok(DType::BF16),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

impl Checkpoint {
    /// Captures every non-frozen parameter of `model`.
    pub fn capture(model: &HandIdModel, meta: CheckpointMeta, optimizer: HashMap<String, Tensor>) -> Result<Self> {
        let model = model.store.snapshot(|_, g| g != ParamGroup::Frozen)?;
        Ok(Checkpoint { meta, model, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut named: Vec<(String, &Tensor)> = self
            .model
            .iter()
            .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
            .chain(self.optimizer.iter().map(|(k, v)| (format!("{OPTIM_PREFIX}{k}"), v)))
            .collect();
        named.sort_by(|a, b| a.0.cmp(&b.0));
        let buffers = named.iter().map(|(_, t)| tensor_bytes(t)).collect::<Result<Vec<_>>>()?;
        let views = named
            .iter()
            .zip(&buffers)
            .map(|((name, t), bytes)| {
                let view = TensorView::new(to_safetensors_dtype(t.dtype())?, t.dims().to_vec(), bytes)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Ok((name.clone(), view))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta_json = serde_json::to_string(&self.meta).map_err(|e| Error::Serialization(e.to_string()))?;
        let info = HashMap::from([
            (META_KEY.to_string(), meta_json),
            ("schema_version".to_string(), self.meta.schema_version.to_string()),
        ]);
        let bytes = safetensors::tensor::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let info = header.metadata().as_ref().ok_or_else(|| bad("no metadata".into()))?;
        let meta: CheckpointMeta =
            serde_json::from_str(info.get(META_KEY).ok_or_else(|| bad("no handid record".into()))?)
                .map_err(|e| bad(e.to_string()))?;
        if meta.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(bad(format!(
                "schema version {} unsupported (expected {CHECKPOINT_SCHEMA_VERSION})",
                meta.schema_version
            )));
        }
        let tensors = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut model = HashMap::new();
        let mut optimizer = HashMap::new();
        for (name, view) in tensors.tensors() {
            let t = Tensor::from_raw_buffer(view.data(), from_safetensors_dtype(view.dtype())?, view.shape(), device)?;
            if let Some(k) = name.strip_prefix(MODEL_PREFIX) {
                model.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(OPTIM_PREFIX) {
                optimizer.insert(k.to_string(), t);
            } else {
                return Err(bad(format!("unexpected tensor {name}")));
            }
        }
        Ok(Checkpoint { meta, model, optimizer })
    }

    /// Checks that this checkpoint was produced for `model`'s backbone,
    /// template and class count, then loads its parameters.
    pub fn restore(&self, model: &HandIdModel) -> Result<()> {
        if self.meta.backbone != model.backbone_id() {
            return Err(Error::BackboneMismatch {
                expected: model.backbone_id().to_string(),
                found: self.meta.backbone.clone(),
            });
        }
        if self.meta.num_classes != model.num_classes() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has K={}, model has K={}",
                self.meta.num_classes,
                model.num_classes()
            )));
        }
        if self.meta.template != model.prompt.text {
            return Err(Error::Checkpoint(format!(
                "checkpoint template {:?} differs from {:?}",
                self.meta.template, model.prompt.text
            )));
        }
        if let Some(frozen) = self.model.keys().find(|k| model.store.group_of(k) == Some(ParamGroup::Frozen)) {
            return Err(Error::Checkpoint(format!("checkpoint overrides frozen parameter {frozen}")));
        }
        model.store.assign(&self.model)
    }
}
