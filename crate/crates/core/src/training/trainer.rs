use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use log::info;
use serde::{Deserialize, Serialize};

use super::augment::AugmentationConfig;
use super::data::{epoch_batches, BatchSampler, LabelMap, TrainLoader};
use super::optim::{build_param_groups, Adam, AdamConfig};
use super::schedule::ScheduleConfig;
use crate::datasets::HandImageRecord;
use crate::error::{Error, Result};
use crate::evaluation::{cmc_curve, feature_table, rank_gallery};
use crate::losses::{similarity_matrix, total_loss, LossComponents, LossConfig};
use crate::model::{Checkpoint, CheckpointMeta, FeatureKind, HandIdModel, CHECKPOINT_SCHEMA_VERSION};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    pub augmentation: AugmentationConfig,
    pub epsilon: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub sampler: BatchSampler,
    pub dropout: bool,
    pub seed: u64,
    pub workers: usize,
    pub checkpoint_every: usize,
    /// Validate every this many epochs (0 disables validation).
    pub validate_every: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        TrainConfig {
            schedule: ScheduleConfig::default(),
            optimizer: AdamConfig::default(),
            augmentation: AugmentationConfig::default(),
            epsilon: loss.epsilon,
            temperature: loss.temperature,
            batch_size: 20,
            sampler: BatchSampler::Shuffle,
            dropout: true,
            seed: 0,
            workers: 1,
            checkpoint_every: 10,
            validate_every: 1,
            eval_batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self, num_classes: usize) -> LossConfig {
        LossConfig { num_classes, epsilon: self.epsilon, temperature: self.temperature }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.augmentation.validate()?;
        self.loss(2).validate()?;
        if self.batch_size < 2 && self.sampler == BatchSampler::Shuffle {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Training pool, held-out validation images (one per identity) and the
/// label map over training identities.
pub struct TrainData {
    pub train: Vec<HandImageRecord>,
    pub validation: Vec<HandImageRecord>,
    pub labels: LabelMap,
}

impl TrainData {
    pub fn new(train: Vec<HandImageRecord>, validation: Vec<HandImageRecord>) -> Self {
        let all: Vec<HandImageRecord> = train.iter().chain(&validation).cloned().collect();
        TrainData { labels: LabelMap::from_records(&all), train, validation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub lr_backbone: f64,
    pub id_loss: f64,
    pub supcon_loss: f64,
    pub total_loss: f64,
    pub val_rank1: Option<f64>,
    pub optimizer_steps: u64,
    #[serde(skip)]
    pub batch_losses: Vec<f64>,
}

/// Where checkpoints and the metrics log go, and the hash stamped into them.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
    pub config_hash: String,
}

impl TrainOutputs {
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
}

pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    pub last: Checkpoint,
    pub best_val_rank1: Option<f64>,
    pub frozen_checksum_before: String,
    pub frozen_checksum_after: String,
}

pub fn checkpoint_name(epochs_completed: usize) -> String {
    format!("epoch_{epochs_completed:03}.safetensors")
}

pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";

/// Where a run left off.
pub struct ResumeState {
    pub checkpoint: Checkpoint,
    pub best_val_rank1: Option<f64>,
}

/// Rank-1 of the training-rest images against the one-per-identity
/// validation gallery.
pub fn validation_rank1(model: &HandIdModel, data: &TrainData, batch_size: usize) -> Result<Option<f64>> {
    if data.validation.is_empty() || data.train.is_empty() {
        return Ok(None);
    }
    let all: Vec<HandImageRecord> = data.train.iter().chain(&data.validation).cloned().collect();
    let table = feature_table(model, &all, batch_size, FeatureKind::PostBn)?;
    let feats = |rs: &[HandImageRecord]| rs.iter().map(|r| table[&r.image_path].clone()).collect::<Vec<_>>();
    let labels = |rs: &[HandImageRecord]| rs.iter().map(|r| r.identity.to_string()).collect::<Vec<_>>();
    let ranking = rank_gallery(
        &feats(&data.train),
        &feats(&data.validation),
        labels(&data.train),
        labels(&data.validation),
        vec![false; data.validation.len()],
    )?;
    Ok(Some(cmc_curve(&ranking, 1)?[0]))
}

fn batch_diagnostics(pixels: &Tensor, out: &crate::model::ForwardOutput, losses: Option<&LossComponents>) -> String {
    let stat = |name: &str, t: &Tensor| -> String {
        let flat = t.flatten_all().and_then(|f| f.to_dtype(candle_core::DType::F64)).and_then(|f| f.to_vec1::<f64>());
        match flat {
            Ok(v) => {
                let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
                let non_finite = v.len() - finite.len();
                let (lo, hi) =
                    finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
                let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
                format!("{name}: min {lo:.4e} max {hi:.4e} mean {mean:.4e} non-finite {non_finite}")
            }
            Err(e) => format!("{name}: unavailable ({e})"),
        }
    };
    let mut lines = vec![
        stat("pixels", pixels),
        stat("image features", &out.image_pre),
        stat("pseudo tokens", &out.pseudo_tokens),
        stat("text features", &out.text),
        stat("logits", &out.logits),
    ];
    if let Some(l) = losses {
        lines.push(format!("losses: id {} supcon {} total {}", l.id, l.supcon, l.total));
    }
    lines.join("; ")
}

fn append_metrics(path: &Path, config_hash: &str, m: &EpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut record = serde_json::to_value(m).map_err(|e| Error::Serialization(e.to_string()))?;
    record["config_hash"] = config_hash.into();
    let line = record.to_string();
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Drops log lines for epochs at or after `from_epoch`, so a resumed run
/// does not duplicate records.
fn truncate_metrics(path: &Path, from_epoch: usize) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(());
    };
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| serde_json::from_str::<EpochMetrics>(l).map(|m| m.epoch < from_epoch).unwrap_or(false))
        .collect();
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Runs the epoch loop from the resume point (or epoch 0) to the end of
/// the schedule.
pub fn train(
    model: &HandIdModel,
    data: &TrainData,
    cfg: &TrainConfig,
    outputs: Option<&TrainOutputs>,
    resume: Option<ResumeState>,
) -> Result<TrainReport> {
    train_until(model, data, cfg, outputs, resume, cfg.schedule.total_epochs)
}

/// Like [`train`] but stops once `stop_epoch` epochs have completed.
pub fn train_until(
    model: &HandIdModel,
    data: &TrainData,
    cfg: &TrainConfig,
    outputs: Option<&TrainOutputs>,
    resume: Option<ResumeState>,
    stop_epoch: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    let num_classes = model.num_classes();
    if data.labels.len() != num_classes {
        return Err(Error::Config(format!(
            "model has {num_classes} classes but the training set has {} identities",
            data.labels.len()
        )));
    }
    let image_size = model.bundle.dims.image_size as u32;
    if cfg.augmentation.crop != image_size {
        return Err(Error::Config(format!(
            "crop size {} does not match the backbone input size {image_size}",
            cfg.augmentation.crop
        )));
    }
    let loss_cfg = cfg.loss(num_classes);
    let mut optim = Adam::new(build_param_groups(model)?, cfg.optimizer, cfg.schedule.weight_decay);
    let mut loader = TrainLoader::new(
        &data.train,
        &data.labels,
        cfg.augmentation,
        model.bundle.normalization,
        cfg.seed,
        cfg.workers,
    )?;
    if loader.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }

    let mut start = 0;
    let mut best = None;
    if let Some(state) = resume {
        state.checkpoint.restore(model)?;
        optim.load_state(&state.checkpoint.optimizer, state.checkpoint.meta.optimizer_steps)?;
        start = state.checkpoint.meta.epochs_completed;
        best = state.best_val_rank1;
        info!("resuming after epoch {start}");
    }
    if let Some(out) = outputs {
        fs::create_dir_all(out.checkpoint_dir()).map_err(|e| Error::io(out.checkpoint_dir(), e))?;
        truncate_metrics(&out.metrics_path(), start)?;
    }

    let frozen_before = model.frozen_checksum()?;
    let stop = stop_epoch.min(cfg.schedule.total_epochs);
    let device = model.device().clone();
    let dtype = model.dtype();
    let mut history = Vec::new();
    let meta = |epochs_completed: usize, steps: u64, val: Option<f64>| CheckpointMeta {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        backbone: model.backbone_id().to_string(),
        template: model.config.template.clone(),
        num_classes,
        config_hash: outputs.map(|o| o.config_hash.clone()).unwrap_or_default(),
        epochs_completed,
        optimizer_steps: steps,
        val_rank1: val,
    };

    for epoch in start..stop {
        let lrs = cfg.schedule.group_lrs(epoch)?;
        let batches = epoch_batches(&loader.labels, cfg.batch_size, cfg.sampler, cfg.seed, epoch);
        let (mut id_sum, mut sc_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut batch_losses = Vec::with_capacity(batches.len());
        for (b, indices) in batches.iter().enumerate() {
            let (pixels, labels) = loader.batch(indices, epoch, &device, dtype)?;
            let mut dropout_rng = rng_for(cfg.seed, &[stream::DROPOUT, epoch as u64, b as u64]);
            let out = model.forward(&pixels, cfg.dropout.then_some(&mut dropout_rng), true)?;
            let s = match similarity_matrix(&out.image_pre, &out.text) {
                Ok(s) => s,
                Err(e) => return Err(Error::NonFinite(format!("{e}; {}", batch_diagnostics(&pixels, &out, None)))),
            };
            let (loss, parts) = match total_loss(&out.logits, &s, &labels, &loss_cfg) {
                Ok(v) => v,
                Err(Error::NonFinite(msg)) => {
                    return Err(Error::NonFinite(format!(
                        "epoch {epoch} batch {b}: {msg}; {}",
                        batch_diagnostics(&pixels, &out, None)
                    )))
                }
                Err(e) => return Err(e),
            };
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} batch {b}: loss is {}; {}",
                    parts.total,
                    batch_diagnostics(&pixels, &out, Some(&parts))
                )));
            }
            let grads = loss.backward()?;
            optim.step(&grads, lrs)?;
            id_sum += parts.id;
            sc_sum += parts.supcon;
            total_sum += parts.total;
            batch_losses.push(parts.total);
        }
        let n = batch_losses.len().max(1) as f64;
        let completed = epoch + 1;
        let val_rank1 = if cfg.validate_every > 0 && (completed % cfg.validate_every == 0 || completed == stop) {
            validation_rank1(model, data, cfg.eval_batch_size)?
        } else {
            None
        };
        let metrics = EpochMetrics {
            epoch,
            lr: lrs.1,
            lr_backbone: lrs.0,
            id_loss: id_sum / n,
            supcon_loss: sc_sum / n,
            total_loss: total_sum / n,
            val_rank1,
            optimizer_steps: optim.steps(),
            batch_losses,
        };
        info!(
            "epoch {completed}/{}: lr {:.3e} loss {:.4} (id {:.4}, supcon {:.4}) val rank-1 {}",
            cfg.schedule.total_epochs,
            metrics.lr,
            metrics.total_loss,
            metrics.id_loss,
            metrics.supcon_loss,
            val_rank1.map_or("-".into(), |v| format!("{:.4}", v))
        );
        if let Some(out) = outputs {
            append_metrics(&out.metrics_path(), &out.config_hash, &metrics)?;
            let is_best = val_rank1.is_some_and(|v| best.is_none_or(|b| v > b));
            let periodic = cfg.checkpoint_every > 0 && completed % cfg.checkpoint_every == 0;
            if is_best || periodic || completed == stop {
                let ckpt = Checkpoint::capture(model, meta(completed, optim.steps(), val_rank1), optim.state()?)?;
                let dir = out.checkpoint_dir();
                if periodic {
                    ckpt.save(&dir.join(checkpoint_name(completed)))?;
                }
                if is_best {
                    ckpt.save(&dir.join(BEST_CHECKPOINT))?;
                }
                ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            }
        }
        if let Some(v) = val_rank1 {
            if best.is_none_or(|b| v > b) {
                best = Some(v);
            }
        }
        history.push(metrics);
    }

    let last_val = history.last().and_then(|m| m.val_rank1);
    let last = Checkpoint::capture(model, meta(stop.max(start), optim.steps(), last_val), optim.state()?)?;
    Ok(TrainReport {
        history,
        last,
        best_val_rank1: best,
        frozen_checksum_before: frozen_before,
        frozen_checksum_after: model.frozen_checksum()?,
    })
}
