use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{cmc_curve, mean_average_precision};
use super::ranking::{rank_gallery, RankingResult};
use crate::datasets::{make_query_gallery_splits, HandImageRecord, QueryGallerySplit};
use crate::error::{Error, Result};
use crate::model::{FeatureKind, HandIdModel};
use crate::training::load_test_batch;

pub const DEFAULT_K_MAX: usize = 20;
pub const DEFAULT_SPLITS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split_index: usize,
    pub cmc: Vec<f64>,
    pub map: f64,
    pub n_queries: usize,
    pub gallery_size: usize,
}

/// Per-split metrics plus their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub cmc_std: Vec<f64>,
    pub map_std: f64,
    pub per_split: Vec<SplitMetrics>,
    pub n_splits: usize,
}

impl EvalResult {
    pub fn rank(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.cmc.get(i).copied())
    }

    pub fn from_splits(per_split: Vec<SplitMetrics>) -> Result<Self> {
        let n = per_split.len();
        if n == 0 {
            return Err(Error::Config("no evaluation splits".into()));
        }
        let k = per_split[0].cmc.len();
        let column = |f: &dyn Fn(&SplitMetrics) -> f64| -> (f64, f64) {
            let vals: Vec<f64> = per_split.iter().map(f).collect();
            mean_std(&vals)
        };
        let (cmc, cmc_std): (Vec<f64>, Vec<f64>) = (0..k).map(|i| column(&|s| s.cmc[i])).unzip();
        let (map, map_std) = column(&|s| s.map);
        Ok(EvalResult { cmc, map, cmc_std, map_std, per_split, n_splits: n })
    }
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Retrieval features for `paths`, in order.
pub fn extract_features(
    model: &HandIdModel,
    paths: &[&Path],
    batch_size: usize,
    kind: FeatureKind,
) -> Result<Vec<Vec<f32>>> {
    let size = model.bundle.dims.image_size as u32;
    let norm = model.bundle.normalization;
    let mut out = Vec::with_capacity(paths.len());
    for chunk in paths.chunks(batch_size.max(1)) {
        let pixels = load_test_batch(chunk, size, &norm, model.device(), model.dtype())?;
        let feats = model.extract_features(&pixels, kind)?;
        let feats = feats.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
        out.extend(feats);
    }
    Ok(out)
}

pub type FeatureTable = HashMap<PathBuf, Vec<f32>>;

pub fn feature_table(
    model: &HandIdModel,
    records: &[HandImageRecord],
    batch_size: usize,
    kind: FeatureKind,
) -> Result<FeatureTable> {
    let mut paths: Vec<&Path> = records.iter().map(|r| r.image_path.as_path()).collect();
    paths.sort();
    paths.dedup();
    let feats = extract_features(model, &paths, batch_size, kind)?;
    Ok(paths.into_iter().map(Path::to_path_buf).zip(feats).collect())
}

fn lookup(table: &FeatureTable, records: &[HandImageRecord]) -> Result<Vec<Vec<f32>>> {
    records
        .iter()
        .map(|r| table.get(&r.image_path).cloned().ok_or_else(|| Error::MissingPath(r.image_path.clone())))
        .collect()
}

pub fn rank_split(table: &FeatureTable, split: &QueryGallerySplit) -> Result<RankingResult> {
    let q = lookup(table, &split.queries)?;
    let g = lookup(table, &split.gallery)?;
    rank_gallery(
        &q,
        &g,
        split.queries.iter().map(|r| r.identity.to_string()).collect(),
        split.gallery.iter().map(|r| r.identity.to_string()).collect(),
        split.distractor_mask(),
    )
}

pub fn split_metrics(ranking: &RankingResult, split_index: usize, k_max: usize) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        split_index,
        cmc: cmc_curve(ranking, k_max)?,
        map: mean_average_precision(ranking)?,
        n_queries: ranking.num_queries(),
        gallery_size: ranking.gallery_size(),
    })
}

/// Metrics over precomputed features for each split.
pub fn evaluate_splits(table: &FeatureTable, splits: &[QueryGallerySplit], k_max: usize) -> Result<EvalResult> {
    let per_split = splits
        .iter()
        .map(|s| split_metrics(&rank_split(table, s)?, s.split_index, k_max))
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_splits(per_split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_splits: usize,
    pub seed: u64,
    pub k_max: usize,
    pub batch_size: usize,
    pub features: FeatureKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_splits: DEFAULT_SPLITS,
            seed: 0,
            k_max: DEFAULT_K_MAX,
            batch_size: 16,
            features: FeatureKind::PostBn,
        }
    }
}

/// Builds `n_splits` query/gallery splits, extracts every image's features
/// once, and aggregates the per-split metrics.
pub fn evaluate_monte_carlo(
    model: &HandIdModel,
    test_records: &[HandImageRecord],
    distractors: &[HandImageRecord],
    opts: &EvalOptions,
) -> Result<(EvalResult, Vec<QueryGallerySplit>)> {
    if opts.n_splits == 0 {
        return Err(Error::Config("need at least one evaluation split".into()));
    }
    let splits = make_query_gallery_splits(test_records, distractors, opts.n_splits, opts.seed);
    let all: Vec<HandImageRecord> = test_records.iter().chain(distractors).cloned().collect();
    let table = feature_table(model, &all, opts.batch_size, opts.features)?;
    Ok((evaluate_splits(&table, &splits, opts.k_max)?, splits))
}
