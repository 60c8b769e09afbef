//! Adam with coupled L2 weight decay over explicit parameter groups.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HandIdModel, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimGroup {
    pub name: &'static str,
    pub params: Vec<(String, Var)>,
}

/// The two optimization groups: pretrained image-encoder weights and the
/// newly added layers. Frozen parameters and buffers belong to neither.
#[derive(Debug, Clone)]
pub struct ParamGroups {
    pub backbone: OptimGroup,
    pub new_layers: OptimGroup,
}

impl ParamGroups {
    /// Assembles groups from explicit `(name, var, group)` assignments,
    /// rejecting any name assigned twice.
    pub fn from_assignments<'a>(assignments: impl IntoIterator<Item = (&'a str, &'a Var, ParamGroup)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut backbone = Vec::new();
        let mut new_layers = Vec::new();
        for (name, var, group) in assignments {
            if !group.is_trainable() {
                continue;
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::DuplicateParameter(name.to_string()));
            }
            let target = if group == ParamGroup::Pretrained { &mut backbone } else { &mut new_layers };
            target.push((name.to_string(), var.clone()));
        }
        Ok(ParamGroups {
            backbone: OptimGroup { name: "backbone", params: backbone },
            new_layers: OptimGroup { name: "new_layers", params: new_layers },
        })
    }

    pub fn len(&self) -> usize {
        self.backbone.params.len() + self.new_layers.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_param_groups(model: &HandIdModel) -> Result<ParamGroups> {
    ParamGroups::from_assignments(model.store.iter())
}

pub struct Adam {
    groups: ParamGroups,
    config: AdamConfig,
    weight_decay: f64,
    steps: u64,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(groups: ParamGroups, config: AdamConfig, weight_decay: f64) -> Self {
        Adam { groups, config, weight_decay, steps: 0, moments: HashMap::new() }
    }

    pub fn groups(&self) -> &ParamGroups {
        &self.groups
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update with the given `(backbone, new layers)` learning rates.
    /// Parameters that received no gradient are left alone.
    pub fn step(&mut self, grads: &GradStore, lrs: (f64, f64)) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (group, lr) in [(&self.groups.backbone, lrs.0), (&self.groups.new_layers, lrs.1)] {
            for (name, var) in &group.params {
                let Some(grad) = grads.get(var.as_tensor()) else {
                    continue;
                };
                let theta = var.as_detached_tensor();
                let g = (grad + (&theta * self.weight_decay)?)?;
                let (m, v) = match self.moments.get(name) {
                    Some((m, v)) => (
                        (m * c.beta1)?.add(&(&g * (1.0 - c.beta1))?)?,
                        (v * c.beta2)?.add(&(g.sqr()? * (1.0 - c.beta2))?)?,
                    ),
                    None => ((&g * (1.0 - c.beta1))?, (g.sqr()? * (1.0 - c.beta2))?),
                };
                let denom = ((&v / bias2)?.sqrt()? + c.eps)?;
                let update = (&m / bias1)?.div(&denom)?;
                var.set(&theta.sub(&(update * lr)?)?)?;
                self.moments.insert(name.clone(), (m, v));
            }
        }
        Ok(())
    }

    /// Moment tensors keyed `m.<param>` / `v.<param>`, plus the step count.
    pub fn state(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = HashMap::new();
        for (name, (m, v)) in &self.moments {
            out.insert(format!("m.{name}"), m.clone());
            out.insert(format!("v.{name}"), v.clone());
        }
        Ok(out)
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor>, steps: u64) -> Result<()> {
        self.moments.clear();
        for (key, m) in state {
            let Some(name) = key.strip_prefix("m.") else { continue };
            let v = state
                .get(&format!("v.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks v.{name}")))?;
            self.moments.insert(name.to_string(), (m.clone(), v.clone()));
        }
        self.steps = steps;
        Ok(())
    }
}
