use candle_core::Tensor;

use super::layers::{BatchNorm1d, Linear};
use super::params::{Builder, Init};
use crate::error::Result;

/// Batch-norm neck followed by a linear identity classifier. Retrieval
/// features are taken after the batch norm.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    bn: BatchNorm1d,
    classifier: Linear,
    num_classes: usize,
}

impl ClassifierHead {
    pub fn new(b: &mut Builder, embed_dim: usize, num_classes: usize, init_std: f64) -> Result<Self> {
        Ok(ClassifierHead {
            bn: BatchNorm1d::new(&mut b.push("bn"), embed_dim)?,
            classifier: Linear::with_init(
                &mut b.push("classifier"),
                embed_dim,
                num_classes,
                true,
                Init::Normal(init_std),
                Init::Zeros,
            )?,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn normalize(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        self.bn.forward(features, train)
    }

    pub fn logits(&self, normalized: &Tensor) -> Result<Tensor> {
        self.classifier.forward(normalized)
    }
}
