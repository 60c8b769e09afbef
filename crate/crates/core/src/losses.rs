//! Identity and image-text alignment objectives.
//!
//! All batch losses are per-anchor quantities mean-reduced over the batch.
//! Softmax terms go through log-sum-exp with max subtraction.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::log_softmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub num_classes: usize,
    /// Label-smoothing value ε.
    pub epsilon: f64,
    /// Softmax temperature τ.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { num_classes: 2, epsilon: 0.1, temperature: 1.0 }
    }
}

impl LossConfig {
    pub fn new(num_classes: usize) -> Self {
        LossConfig { num_classes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("smoothing ε={} must lie in [0, 1)", self.epsilon)));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature τ={} must be positive", self.temperature)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need K ≥ 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }
}

/// Label-smoothed target distribution: `1 − ε(K−1)/K` on the true label and
/// `ε/K` everywhere else.
pub fn smoothed_targets(label: usize, cfg: &LossConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let k = cfg.num_classes;
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let off = cfg.epsilon / k as f64;
    let on = 1.0 - (k as f64 - 1.0) / k as f64 * cfg.epsilon;
    let mut q = vec![off; k];
    q[label] = on;
    Ok(q)
}

fn all_finite(t: &Tensor) -> Result<bool> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?.iter().all(|v| v.is_finite()))
}

/// Cross-entropy against smoothed targets, averaged over the batch.
pub fn id_loss(logits: &Tensor, labels: &[usize], cfg: &LossConfig) -> Result<Tensor> {
    let (batch, k) = logits.dims2()?;
    if batch != labels.len() {
        return Err(Error::Shape(format!("{batch} logit rows, {} labels", labels.len())));
    }
    if k != cfg.num_classes {
        return Err(Error::Shape(format!("{k} logit columns, K={}", cfg.num_classes)));
    }
    if !all_finite(logits)? {
        return Err(Error::NonFinite("identity logits".into()));
    }
    let targets = labels.iter().map(|&y| smoothed_targets(y, cfg)).collect::<Result<Vec<_>>>()?.concat();
    let targets = Tensor::from_vec(targets, (batch, k), logits.device())?.to_dtype(logits.dtype())?;
    let log_p = log_softmax(logits, 1)?;
    Ok((log_p * targets)?.sum(1)?.neg()?.mean(0)?)
}

/// Cosine similarities `S[i][j] = sim(I_i, T_j)`.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix(pub Tensor);

impl SimilarityMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn batch_size(&self) -> Result<usize> {
        let (rows, cols) = self.0.dims2()?;
        if rows != cols {
            return Err(Error::Shape(format!("similarity matrix is {rows}×{cols}, expected square")));
        }
        Ok(rows)
    }

    pub fn to_vec2(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }
}

fn l2_normalize_rows(x: &Tensor, which: &'static str) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(1)?.sqrt()?;
    let values = norms.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if let Some(row) = values.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroNorm { which, row });
    }
    Ok(x.broadcast_div(&norms)?)
}

pub fn similarity_matrix(image: &Tensor, text: &Tensor) -> Result<SimilarityMatrix> {
    let (_, d_img) = image.dims2()?;
    let (_, d_txt) = text.dims2()?;
    if d_img != d_txt {
        return Err(Error::Shape(format!("image width {d_img}, text width {d_txt}")));
    }
    let i = l2_normalize_rows(image, "image")?;
    let t = l2_normalize_rows(text, "text")?;
    Ok(SimilarityMatrix(i.matmul(&t.t()?)?))
}

fn diagonal_mean_nll(log_probs: &Tensor) -> Result<Tensor> {
    let n = log_probs.dim(0)?;
    let eye = Tensor::eye(n, log_probs.dtype(), log_probs.device())?;
    Ok((log_probs * eye)?.sum(1)?.neg()?.mean(0)?)
}

/// Image-to-text InfoNCE: each image row's softmax over all texts, scored
/// at its own text.
pub fn contrastive_i2t(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<Tensor> {
    s.batch_size()?;
    diagonal_mean_nll(&log_softmax(&(s.tensor() / cfg.temperature)?, 1)?)
}

/// Text-to-image InfoNCE: each text column's softmax over all images.
pub fn contrastive_t2i(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<Tensor> {
    s.batch_size()?;
    diagonal_mean_nll(&log_softmax(&(s.tensor() / cfg.temperature)?, 0)?)
}

/// Symmetric supervised contrastive loss. For anchor `i` with positive set
/// `P(y_i) = {p : y_p = y_i}`, the image-to-text term averages
/// `−log softmax_b(S[p][b])[i]` over `p ∈ P(y_i)` and the text-to-image term
/// averages `−log softmax_b(S[b][i])[p]`; both are mean-reduced over anchors
/// and summed. The text for identity `y_i` is anchor `i`'s own text.
pub fn supcon(s: &SimilarityMatrix, labels: &[usize], cfg: &LossConfig) -> Result<Tensor> {
    let n = s.batch_size()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{n}×{n} similarities, {} labels", labels.len())));
    }
    let scaled = (s.tensor() / cfg.temperature)?;
    // mask[p][i] = 1 / |P(y_i)| when y_p = y_i.
    let mut mask = vec![0.0f64; n * n];
    for i in 0..n {
        let positives = labels.iter().filter(|&&y| y == labels[i]).count() as f64;
        for p in 0..n {
            if labels[p] == labels[i] {
                mask[p * n + i] = 1.0 / positives;
            }
        }
    }
    let mask = Tensor::from_vec(mask, (n, n), scaled.device())?.to_dtype(scaled.dtype())?;
    let per_anchor = |log_probs: Tensor| -> Result<Tensor> { Ok((log_probs * &mask)?.sum(0)?.neg()?.mean(0)?) };
    let i2t = per_anchor(log_softmax(&scaled, 1)?)?;
    let t2i = per_anchor(log_softmax(&scaled, 0)?)?;
    Ok((i2t + t2i)?)
}

/// Scalar loss values for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub id: f64,
    pub supcon: f64,
    pub total: f64,
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Identity loss plus supervised contrastive loss.
pub fn total_loss(
    logits: &Tensor,
    s: &SimilarityMatrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(Tensor, LossComponents)> {
    let id = id_loss(logits, labels, cfg)?;
    let sc = supcon(s, labels, cfg)?;
    let total = (&id + &sc)?;
    let components = LossComponents { id: scalar(&id)?, supcon: scalar(&sc)?, total: scalar(&total)? };
    Ok((total, components))
}
