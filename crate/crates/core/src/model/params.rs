//! Named parameter storage with explicit optimization groups.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::SeededRng;

/// Which optimization group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Never updated: text encoder and token embedder.
    Frozen,
    /// Pretrained image-encoder weights, trained at a reduced learning rate.
    Pretrained,
    /// Layers added on top of the backbone, trained at the full rate.
    NewLayer,
    /// Non-gradient state that must persist (batch-norm running statistics,
    /// the frozen batch-norm bias).
    Buffer,
}

impl ParamGroup {
    pub fn is_trainable(self) -> bool {
        matches!(self, ParamGroup::Pretrained | ParamGroup::NewLayer)
    }
}

#[derive(Debug, Clone)]
pub enum Init {
    Normal(f64),
    Uniform(f64),
    Zeros,
    Ones,
}

struct Entry {
    var: Var,
    group: ParamGroup,
}

pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        ParamStore { entries: BTreeMap::new(), device, dtype }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: &str, value: Tensor, group: ParamGroup) -> Result<Var> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        self.entries.insert(name.to_string(), Entry { var: var.clone(), group });
        Ok(var)
    }

    pub fn init_tensor(&self, shape: &[usize], init: &Init, rng: &mut SeededRng) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Normal(std) => {
                let dist = Normal::new(0.0, *std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Uniform(bound) => {
                let dist = Uniform::new_inclusive(-bound, *bound).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        self.entries.get(name).map(|e| e.group)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All parameters with their group, in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var, ParamGroup)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), &e.var, e.group))
    }

    pub fn vars_in(&self, group: ParamGroup) -> Vec<(String, Var)> {
        self.iter().filter(|(_, _, g)| *g == group).map(|(n, v, _)| (n.to_string(), v.clone())).collect()
    }

    pub fn count_in(&self, group: ParamGroup) -> usize {
        self.iter().filter(|(_, _, g)| *g == group).count()
    }

    /// SHA-256 over the names, shapes and raw bytes of every parameter
    /// selected by `filter`.
    pub fn checksum(&self, filter: impl Fn(&str, ParamGroup) -> bool) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var, group) in self.iter() {
            if !filter(name, group) {
                continue;
            }
            hasher.update(name.as_bytes());
            for d in var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            hasher.update(tensor_bytes(var.as_tensor())?);
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn checksum_group(&self, group: ParamGroup) -> Result<String> {
        self.checksum(|_, g| g == group)
    }

    pub fn checksum_prefix(&self, prefix: &str) -> Result<String> {
        self.checksum(|n, _| n.starts_with(prefix))
    }

    /// Copies of every parameter selected by `filter`, keyed by name.
    pub fn snapshot(&self, filter: impl Fn(&str, ParamGroup) -> bool) -> Result<HashMap<String, Tensor>> {
        self.iter()
            .filter(|(n, _, g)| filter(n, *g))
            .map(|(n, v, _)| Ok((n.to_string(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites parameters from `values`. Every name must exist with the
    /// same shape; parameters absent from `values` are left untouched.
    pub fn assign(&self, values: &HashMap<String, Tensor>) -> Result<()> {
        for (name, value) in values {
            let var = self.get(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if var.dims() != value.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: model {:?}, file {:?}",
                    var.dims(),
                    value.dims()
                )));
            }
            var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }
}

/// Raw little-endian bytes of a tensor in its own dtype.
pub fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        _ => flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
    })
}

/// Where a builder gets parameter values from: fresh initialization or a
/// set of pretrained tensors keyed by name.
#[allow(clippy::large_enum_variant)]
pub enum WeightSource {
    Init(SeededRng),
    Pretrained(HashMap<String, Tensor>),
}

/// Registers parameters under a dotted name prefix, the way the pretrained
/// checkpoints name them.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    source: &'a mut WeightSource,
    prefix: String,
    group: ParamGroup,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, source: &'a mut WeightSource, group: ParamGroup) -> Self {
        Builder { store, source, prefix: String::new(), group }
    }

    pub fn push(&mut self, segment: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() { segment.to_string() } else { format!("{}.{segment}", self.prefix) };
        Builder { store: self.store, source: self.source, prefix, group: self.group }
    }

    pub fn with_group(&mut self, group: ParamGroup) -> Builder<'_> {
        Builder { store: self.store, source: self.source, prefix: self.prefix.clone(), group }
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Registers a parameter and returns the tensor layers should compute
    /// with. Frozen parameters come back detached so no gradient is tracked.
    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.tensor_in(name, shape, init, self.group)
    }

    pub fn tensor_in(&mut self, name: &str, shape: &[usize], init: Init, group: ParamGroup) -> Result<Tensor> {
        let full = self.full_name(name);
        let value = match self.source {
            WeightSource::Init(rng) => self.store.init_tensor(shape, &init, rng)?,
            WeightSource::Pretrained(map) => match map.get(&full) {
                Some(t) => {
                    if t.dims() != shape {
                        return Err(Error::Checkpoint(format!(
                            "pretrained {full} has shape {:?}, expected {shape:?}",
                            t.dims()
                        )));
                    }
                    t.clone()
                }
                None if group == ParamGroup::Buffer || !matches!(init, Init::Normal(_) | Init::Uniform(_)) => {
                    // Optional tensors (fresh buffers, zero biases) fall back to init.
                    self.store.init_tensor(shape, &init, &mut crate::seed::rng_for(0, &[]))?
                }
                None => return Err(Error::Checkpoint(format!("pretrained weights lack {full}"))),
            },
        };
        let var = self.store.insert(&full, value, group)?;
        Ok(if group.is_trainable() { var.as_tensor().clone() } else { var.as_detached_tensor() })
    }

    /// Registers a non-trainable state tensor and returns its variable so the
    /// caller can update it in place.
    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = self.full_name(name);
        self.tensor_in(name, shape, init, ParamGroup::Buffer)?;
        Ok(self.store.get(&full).expect("just inserted").clone())
    }
}
