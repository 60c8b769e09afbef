use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup followed by step decay, plus the backbone learning-rate
/// ratio and weight decay shared by both parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_base: f64,
    /// `(epoch, lr)` pairs: from `epoch` on, the rate is `lr`.
    pub steps: Vec<(usize, f64)>,
    pub total_epochs: usize,
    pub backbone_lr_ratio: f64,
    pub weight_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            warmup_epochs: 10,
            lr_start: 5e-8,
            lr_base: 5e-6,
            steps: vec![(40, 2.5e-6), (60, 1.25e-6)],
            total_epochs: 70,
            backbone_lr_ratio: 0.1,
            weight_decay: 5e-4,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("schedule: {msg}")));
        if !(self.lr_start > 0.0 && self.lr_base > 0.0) {
            return bad("learning rates must be positive".into());
        }
        let mut prev_epoch = self.warmup_epochs;
        let mut prev_lr = self.lr_base;
        for &(epoch, lr) in &self.steps {
            if epoch <= prev_epoch {
                return bad(format!("step at epoch {epoch} must come after epoch {prev_epoch}"));
            }
            if !(lr > 0.0 && lr <= prev_lr) {
                return bad(format!("step lr {lr} must be positive and not above {prev_lr}"));
            }
            prev_epoch = epoch;
            prev_lr = lr;
        }
        if self.total_epochs <= prev_epoch {
            return bad(format!("total_epochs {} must exceed epoch {prev_epoch}", self.total_epochs));
        }
        if self.backbone_lr_ratio.is_nan() || self.backbone_lr_ratio <= 0.0 || self.weight_decay < 0.0 {
            return bad("backbone ratio must be positive and weight decay non-negative".into());
        }
        Ok(())
    }

    /// Learning rate of the newly added layers at (0-based) epoch `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Config(format!("epoch {epoch} outside schedule of {} epochs", self.total_epochs)));
        }
        if epoch < self.warmup_epochs {
            let frac = epoch as f64 / self.warmup_epochs as f64;
            return Ok(self.lr_start + (self.lr_base - self.lr_start) * frac);
        }
        Ok(self.steps.iter().rev().find(|(start, _)| epoch >= *start).map(|&(_, lr)| lr).unwrap_or(self.lr_base))
    }

    /// `(backbone, new layers)` learning rates at `epoch`.
    pub fn group_lrs(&self, epoch: usize) -> Result<(f64, f64)> {
        let lr = self.lr_at_epoch(epoch)?;
        Ok((lr * self.backbone_lr_ratio, lr))
    }
}
