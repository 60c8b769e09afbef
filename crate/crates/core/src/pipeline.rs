//! The four commands: prepare manifests, train, evaluate, visualize. Every
//! artifact in the output directory carries the resolved config hash.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use log::info;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::{BackboneKind, ExperimentConfig};
use crate::datasets::{
    identity_counts, make_query_gallery_splits, make_validation_split, partition_identities, scan_11k, scan_hd,
    split_distractors, HandImageRecord, Manifest, QueryGallerySplit, Role, Subset,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_splits, feature_table, rank_split, render_ranked_grid, render_report, write_png, EvalResult, GridLayout,
};
use crate::model::{BackboneProvider, Checkpoint, HandIdModel, PretrainedBackbone, StubBackbone};
use crate::seed::{rng_for, stream};
use crate::training::{train, ResumeState, TrainData, TrainOutputs, TrainReport, BEST_CHECKPOINT, LAST_CHECKPOINT};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const PNG_HASH_KEY: &str = "handid-config-hash";

#[derive(Serialize, Deserialize)]
struct ResolvedFile {
    config_hash: String,
    config: ExperimentConfig,
}

/// Output directory bound to one resolved config.
pub struct RunDir {
    pub root: PathBuf,
    pub hash: String,
}

impl RunDir {
    /// Claims `cfg.output_dir` for this config. A directory written under a
    /// different config hash is refused unless `overwrite` is set.
    pub fn open(cfg: &ExperimentConfig, overwrite: bool) -> Result<Self> {
        let root = cfg.output_dir.clone();
        let hash = cfg.hash();
        let resolved = root.join(RESOLVED_CONFIG);
        if let Ok(text) = fs::read_to_string(&resolved) {
            let existing = serde_json::from_str::<ResolvedFile>(&text)
                .map(|f| f.config_hash)
                .unwrap_or_else(|_| "<unreadable>".into());
            if existing != hash && !overwrite {
                return Err(Error::ConfigHashMismatch { dir: root, existing, current: hash });
            }
        }
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let body = serde_json::to_string_pretty(&ResolvedFile { config_hash: hash.clone(), config: cfg.clone() })
            .map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(&resolved, body + "\n").map_err(|e| Error::io(&resolved, e))?;
        Ok(RunDir { root, hash })
    }

    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }

    pub fn partition_manifest(&self) -> PathBuf {
        self.manifests().join("partition.tsv")
    }

    pub fn split_manifest(&self, k: usize) -> PathBuf {
        self.manifests().join(format!("split_{k:02}.tsv"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn grids(&self) -> PathBuf {
        self.root.join("grids")
    }
}

/// Records of the configured subset plus HD distractors.
pub fn scan_dataset(cfg: &ExperimentConfig) -> Result<(Vec<HandImageRecord>, Vec<HandImageRecord>)> {
    let d = &cfg.dataset;
    if d.subset == Subset::Hd {
        let dirs: Vec<&str> = d.low_quality_dirs.iter().map(String::as_str).collect();
        Ok(split_distractors(scan_hd(&d.root, &dirs)?))
    } else {
        let meta = d
            .metadata
            .as_ref()
            .ok_or_else(|| Error::Config("dataset.metadata is required for the 11k subsets".into()))?;
        let records: Vec<HandImageRecord> =
            scan_11k(&d.root, meta)?.into_iter().filter(|r| r.subset == d.subset).collect();
        if records.is_empty() {
            return Err(Error::NoRecords(d.root.clone()));
        }
        Ok((records, Vec::new()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub subset: Subset,
    pub identities: usize,
    pub images: usize,
    pub train_identities: usize,
    pub test_identities: usize,
    pub train_images: usize,
    pub validation_images: usize,
    pub test_images: usize,
    pub distractors: usize,
    /// `(gallery size, query count)` per split.
    pub splits: Vec<(usize, usize)>,
}

impl PrepareSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "subset {}: {} identities, {} images\n  train {} identities ({} images, {} held out for validation)\n  test {} identities ({} images), {} distractors\n",
            self.subset,
            self.identities,
            self.images,
            self.train_identities,
            self.train_images,
            self.validation_images,
            self.test_identities,
            self.test_images,
            self.distractors
        );
        for (k, (g, q)) in self.splits.iter().enumerate() {
            s.push_str(&format!("  split {k:02}: gallery {g}, queries {q}\n"));
        }
        s
    }
}

/// Everything the later commands read back from the manifests.
pub struct Prepared {
    pub train: Vec<HandImageRecord>,
    pub validation: Vec<HandImageRecord>,
    pub test: Vec<HandImageRecord>,
    pub distractors: Vec<HandImageRecord>,
    pub splits: Vec<QueryGallerySplit>,
}

pub fn cmd_prepare(cfg: &ExperimentConfig, overwrite: bool) -> Result<PrepareSummary> {
    cfg.validate()?;
    let run = RunDir::open(cfg, overwrite)?;
    prepare_into(cfg, &run)
}

fn prepare_into(cfg: &ExperimentConfig, run: &RunDir) -> Result<PrepareSummary> {
    let (records, distractors) = scan_dataset(cfg)?;
    let partition = partition_identities(&records, cfg.seeds.partition)?;
    let train_all = partition.train_records(&records);
    let test = partition.test_records(&records);
    let (validation, train) = make_validation_split(&train_all, cfg.seeds.partition);
    let splits = make_query_gallery_splits(&test, &distractors, cfg.evaluation.n_splits, cfg.seeds.splits);

    fs::create_dir_all(run.manifests()).map_err(|e| Error::io(run.manifests(), e))?;
    Manifest::partition(&run.hash, &train, &validation, &test, &distractors).write(&run.partition_manifest())?;
    for s in &splits {
        Manifest::split(&run.hash, s).write(&run.split_manifest(s.split_index))?;
    }
    let summary = PrepareSummary {
        subset: cfg.dataset.subset,
        identities: identity_counts(&records).values().sum(),
        images: records.len(),
        train_identities: partition.train_ids.len(),
        test_identities: partition.test_ids.len(),
        train_images: train_all.len(),
        validation_images: validation.len(),
        test_images: test.len(),
        distractors: distractors.len(),
        splits: splits.iter().map(|s| (s.gallery.len(), s.queries.len())).collect(),
    };
    info!("{}", summary.render().trim_end());
    Ok(summary)
}

fn read_manifest(path: &Path, hash: &str) -> Result<Option<Manifest>> {
    if !path.exists() {
        return Ok(None);
    }
    let m = Manifest::read(path)?;
    Ok((m.config_hash == hash).then_some(m))
}

/// Reads the manifests, regenerating them first if they are missing or were
/// written under another config.
pub fn load_prepared(cfg: &ExperimentConfig, run: &RunDir) -> Result<Prepared> {
    let stale = read_manifest(&run.partition_manifest(), &run.hash)?.is_none()
        || (0..cfg.evaluation.n_splits).any(|k| !run.split_manifest(k).exists());
    if stale {
        info!("manifests missing or stale; preparing");
        prepare_into(cfg, run)?;
    }
    let partition = read_manifest(&run.partition_manifest(), &run.hash)?
        .ok_or_else(|| Error::Config("partition manifest does not match the config".into()))?;
    let splits = (0..cfg.evaluation.n_splits)
        .map(|k| {
            read_manifest(&run.split_manifest(k), &run.hash)?
                .ok_or_else(|| Error::Config(format!("split manifest {k} does not match the config")))?
                .to_split()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        train: partition.records(Role::Train)?,
        validation: partition.records(Role::Val)?,
        test: partition.records(Role::Test)?,
        distractors: partition.records(Role::Distractor)?,
        splits,
    })
}

pub fn provider(cfg: &ExperimentConfig) -> Result<Box<dyn BackboneProvider>> {
    let b = &cfg.backbone;
    Ok(match b.kind {
        BackboneKind::Stub => Box::new(StubBackbone::new(b.stub.clone())),
        _ => {
            let (Some(c), Some(w)) = (&b.config, &b.weights) else {
                return Err(Error::Config("pretrained backbones need backbone.config and backbone.weights".into()));
            };
            Box::new(PretrainedBackbone::open(c, w)?)
        }
    })
}

pub fn build_model(cfg: &ExperimentConfig, num_classes: usize) -> Result<HandIdModel> {
    HandIdModel::new(provider(cfg)?.as_ref(), cfg.model.clone(), num_classes, &Device::Cpu, DType::F32)
}

fn train_data(prepared: &Prepared) -> TrainData {
    TrainData::new(prepared.train.clone(), prepared.validation.clone())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub overwrite: bool,
    pub resume: bool,
}

pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let run = RunDir::open(cfg, opts.overwrite)?;
    let prepared = load_prepared(cfg, &run)?;
    let data = train_data(&prepared);
    let model = build_model(cfg, data.labels.len())?;
    let resume = if opts.resume {
        let last = run.checkpoints().join(LAST_CHECKPOINT);
        if last.exists() {
            let checkpoint = Checkpoint::load(&last, model.device())?;
            if checkpoint.meta.config_hash != run.hash {
                return Err(Error::ConfigHashMismatch {
                    dir: last,
                    existing: checkpoint.meta.config_hash,
                    current: run.hash.clone(),
                });
            }
            let best = run.checkpoints().join(BEST_CHECKPOINT);
            let best_val_rank1 =
                if best.exists() { Checkpoint::load(&best, model.device())?.meta.val_rank1 } else { None };
            Some(ResumeState { checkpoint, best_val_rank1 })
        } else {
            info!("no checkpoint to resume from; starting fresh");
            None
        }
    } else {
        None
    };
    let outputs = TrainOutputs { dir: run.root.clone(), config_hash: run.hash.clone() };
    train(&model, &data, &cfg.train, Some(&outputs), resume)
}

/// Builds the model for `checkpoint` (default: the last one) and restores it.
fn load_trained(
    cfg: &ExperimentConfig,
    run: &RunDir,
    prepared: &Prepared,
    checkpoint: Option<&Path>,
) -> Result<(HandIdModel, PathBuf)> {
    let path = checkpoint.map_or_else(|| run.checkpoints().join(LAST_CHECKPOINT), Path::to_path_buf);
    if !path.exists() {
        return Err(Error::MissingPath(path));
    }
    let model = build_model(cfg, train_data(prepared).labels.len())?;
    Checkpoint::load(&path, model.device())?.restore(&model)?;
    Ok((model, path))
}

pub struct EvaluateOutput {
    pub result: EvalResult,
    pub report: String,
    pub report_path: PathBuf,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, overwrite: bool) -> Result<EvaluateOutput> {
    cfg.validate()?;
    let run = RunDir::open(cfg, overwrite)?;
    let prepared = load_prepared(cfg, &run)?;
    let (model, ckpt_path) = load_trained(cfg, &run, &prepared, checkpoint)?;
    let all: Vec<HandImageRecord> = prepared.test.iter().chain(&prepared.distractors).cloned().collect();
    let table = feature_table(&model, &all, cfg.evaluation.batch_size, cfg.evaluation.features)?;
    let result = evaluate_splits(&table, &prepared.splits, cfg.evaluation.k_max)?;
    let stem = ckpt_path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint").to_string();
    let title = format!("{} {} ({})", cfg.dataset.subset, model.backbone_id(), stem);
    let report = format!("# config-hash {}\n{}", run.hash, render_report(&title, &result));
    fs::create_dir_all(run.reports()).map_err(|e| Error::io(run.reports(), e))?;
    let report_path = run.reports().join(format!("eval_{stem}.txt"));
    fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    let json_path = run.reports().join(format!("eval_{stem}.json"));
    let json = serde_json::json!({ "config_hash": run.hash, "checkpoint": stem, "result": result });
    fs::write(&json_path, json.to_string() + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(EvaluateOutput { result, report, report_path })
}

pub struct VisualizeOutput {
    pub path: PathBuf,
    /// Indices into the split's query list, in row order.
    pub queries: Vec<usize>,
    pub matches: Vec<Vec<bool>>,
    pub shown: usize,
}

/// Renders ranked grids for `n_queries` randomly chosen queries of `split`.
pub fn cmd_visualize(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    n_queries: usize,
    top_n: usize,
    split: usize,
    overwrite: bool,
) -> Result<VisualizeOutput> {
    cfg.validate()?;
    let run = RunDir::open(cfg, overwrite)?;
    let prepared = load_prepared(cfg, &run)?;
    let s = prepared.splits.get(split).ok_or_else(|| Error::Config(format!("split {split} does not exist")))?;
    let (model, _) = load_trained(cfg, &run, &prepared, checkpoint)?;
    let records: Vec<HandImageRecord> = s.gallery.iter().chain(&s.queries).cloned().collect();
    let table = feature_table(&model, &records, cfg.evaluation.batch_size, cfg.evaluation.features)?;
    let ranking = rank_split(&table, s)?;
    let mut rng = rng_for(cfg.seeds.splits, &[stream::VISUALIZE, split as u64]);
    let n = n_queries.min(s.queries.len());
    let queries = sample(&mut rng, s.queries.len(), n).into_vec();
    let query_paths: Vec<PathBuf> = s.queries.iter().map(|r| r.image_path.clone()).collect();
    let gallery_paths: Vec<PathBuf> = s.gallery.iter().map(|r| r.image_path.clone()).collect();
    let grid = render_ranked_grid(&ranking, &query_paths, &gallery_paths, &queries, top_n, GridLayout::default())?;
    fs::create_dir_all(run.grids()).map_err(|e| Error::io(run.grids(), e))?;
    let path = run.grids().join(format!("split_{split:02}.png"));
    write_png(&grid.image, &path, &[(PNG_HASH_KEY, &run.hash)])?;
    Ok(VisualizeOutput { path, queries, shown: top_n.min(s.gallery.len()), matches: grid.matches })
}
