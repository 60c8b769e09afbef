//! Image loading, label assignment and batch assembly.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{test_transform, train_transform, AugmentationConfig, Chw};
use crate::datasets::{HandImageRecord, Identity};
use crate::error::{Error, Result};
use crate::model::Normalization;
use crate::seed::{rng_for, stream, SeededRng};

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

/// Dense class indices for the identities in a training set, in sorted
/// identity order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    index: BTreeMap<Identity, usize>,
}

impl LabelMap {
    pub fn from_records(records: &[HandImageRecord]) -> Self {
        let mut ids: Vec<&Identity> = records.iter().map(|r| &r.identity).collect();
        ids.sort();
        ids.dedup();
        LabelMap { index: ids.into_iter().cloned().enumerate().map(|(i, id)| (id, i)).collect() }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn label(&self, id: &Identity) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::Config(format!("identity {id} has no training label")))
    }

    pub fn labels(&self, records: &[HandImageRecord]) -> Result<Vec<usize>> {
        records.iter().map(|r| self.label(&r.identity)).collect()
    }
}

/// Decoded training images, stored after the initial resize so the
/// per-epoch work is crop, flip and jitter only.
pub struct ImageCache {
    size: u32,
    images: HashMap<PathBuf, Arc<RgbImage>>,
}

impl ImageCache {
    pub fn new(size: u32) -> Self {
        ImageCache { size, images: HashMap::new() }
    }

    pub fn get(&mut self, path: &Path) -> Result<Arc<RgbImage>> {
        if let Some(img) = self.images.get(path) {
            return Ok(img.clone());
        }
        let raw = load_rgb(path)?;
        let img = Arc::new(image::imageops::resize(&raw, self.size, self.size, FilterType::Triangle));
        self.images.insert(path.to_path_buf(), img.clone());
        Ok(img)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn stack_chw(samples: &[Chw], size: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let flat: Vec<f32> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    if flat.len() != samples.len() * 3 * size * size {
        return Err(Error::Shape(format!("samples do not match 3×{size}×{size}")));
    }
    Ok(Tensor::from_vec(flat, (samples.len(), 3, size, size), device)?.to_dtype(dtype)?)
}

/// Test-path pixel tensor for `paths`.
pub fn load_test_batch(
    paths: &[&Path],
    size: u32,
    norm: &Normalization,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let samples = paths.iter().map(|p| Ok(test_transform(&load_rgb(p)?, size, norm))).collect::<Result<Vec<_>>>()?;
    stack_chw(&samples, size as usize, device, dtype)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchSampler {
    /// Reshuffle the whole training set each epoch.
    #[default]
    Shuffle,
    /// `identities` identities with `per_identity` images each per batch.
    IdentityBalanced { identities: usize, per_identity: usize },
}

/// Sample indices for one epoch, grouped into batches. A trailing batch of
/// one sample is dropped because the batch norm needs two.
pub fn epoch_batches(
    labels: &[usize],
    batch_size: usize,
    sampler: BatchSampler,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = rng_for(seed, &[stream::SHUFFLE, epoch as u64]);
    let mut batches: Vec<Vec<usize>> = match sampler {
        BatchSampler::Shuffle => {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut rng);
            order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
        }
        BatchSampler::IdentityBalanced { identities, per_identity } => {
            identity_balanced(labels, identities.max(1), per_identity.max(1), &mut rng)
        }
    };
    if batches.last().is_some_and(|b| b.len() < 2) {
        batches.pop();
    }
    batches
}

fn identity_balanced(labels: &[usize], identities: usize, per_identity: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for (_, mut idx) in by_label {
        idx.shuffle(rng);
        chunks.extend(idx.chunks(per_identity).map(<[usize]>::to_vec));
    }
    chunks.shuffle(rng);
    chunks.chunks(identities).map(|group| group.iter().flatten().copied().collect()).collect()
}

/// Builds augmented pixel tensors for training batches. Each sample draws
/// from its own stream keyed by (epoch, sample index), so worker count does
/// not affect the result.
pub struct TrainLoader {
    pub paths: Vec<PathBuf>,
    pub labels: Vec<usize>,
    pub augmentation: AugmentationConfig,
    pub normalization: Normalization,
    pub seed: u64,
    pub workers: usize,
    cache: ImageCache,
}

impl TrainLoader {
    pub fn new(
        records: &[HandImageRecord],
        labels: &LabelMap,
        augmentation: AugmentationConfig,
        normalization: Normalization,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        augmentation.validate()?;
        let cache_size = if augmentation.enabled { augmentation.resize } else { augmentation.crop };
        Ok(TrainLoader {
            paths: records.iter().map(|r| r.image_path.clone()).collect(),
            labels: labels.labels(records)?,
            augmentation,
            normalization,
            seed,
            workers: workers.max(1),
            cache: ImageCache::new(cache_size),
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn batch(
        &mut self,
        indices: &[usize],
        epoch: usize,
        device: &Device,
        dtype: DType,
    ) -> Result<(Tensor, Vec<usize>)> {
        let images = indices.iter().map(|&i| self.cache.get(&self.paths[i])).collect::<Result<Vec<_>>>()?;
        let cfg = self.augmentation;
        let norm = self.normalization;
        let seed = self.seed;
        let work = |(&i, img): (&usize, &Arc<RgbImage>)| {
            let mut rng = rng_for(seed, &[stream::AUGMENT, epoch as u64, i as u64]);
            train_transform(img, &cfg, &norm, &mut rng)
        };
        let samples: Vec<Chw> = if self.workers <= 1 || indices.len() < 2 {
            indices.iter().zip(&images).map(work).collect()
        } else {
            let per = indices.len().div_ceil(self.workers);
            std::thread::scope(|s| {
                let handles: Vec<_> = indices
                    .chunks(per)
                    .zip(images.chunks(per))
                    .map(|(ix, im)| s.spawn(move || ix.iter().zip(im).map(work).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("augmentation worker panicked")).collect()
            })
        };
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((stack_chw(&samples, cfg.crop as usize, device, dtype)?, labels))
    }
}
