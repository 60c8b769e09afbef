use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{causal_mask, LayerNorm, Transformer};
use super::params::{Builder, Init};
use super::prompt::PromptBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    /// Token embedding width D.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

/// Causal text transformer that consumes token embeddings directly, so a
/// pseudo-token can be spliced in after lookup and before positional
/// encoding. The output is the layer-normalized end-token state, projected
/// to the shared embedding space.
#[derive(Debug, Clone)]
pub struct TextTransformer {
    token_embedding: Tensor,
    positional_embedding: Tensor,
    transformer: Transformer,
    ln_final: LayerNorm,
    text_projection: Tensor,
    mask: Tensor,
    config: TextConfig,
}

impl TextTransformer {
    pub fn new(b: &mut Builder, config: &TextConfig, embed_dim: usize) -> Result<Self> {
        let w = config.width;
        let token_embedding =
            b.push("token_embedding").tensor("weight", &[config.vocab_size, w], Init::Normal(0.02))?;
        let positional_embedding = b.tensor("positional_embedding", &[config.context_length, w], Init::Normal(0.01))?;
        let transformer = Transformer::new(&mut b.push("transformer"), w, config.layers, config.heads)?;
        let ln_final = LayerNorm::new(&mut b.push("ln_final"), w)?;
        let text_projection = b.tensor("text_projection", &[w, embed_dim], Init::Normal((w as f64).powf(-0.5)))?;
        let mask = causal_mask(config.context_length, b.dtype(), b.device())?;
        Ok(TextTransformer {
            token_embedding,
            positional_embedding,
            transformer,
            ln_final,
            text_projection,
            mask,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &TextConfig {
        &self.config
    }

    /// Frozen token-embedding lookup: `N` ids to an `N×D` matrix.
    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor> {
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Config(format!("token id {bad} outside vocabulary")));
        }
        let ids = Tensor::new(ids, self.token_embedding.device())?;
        Ok(self.token_embedding.index_select(&ids, 0)?)
    }

    pub fn encode(&self, prompts: &PromptBatch) -> Result<Tensor> {
        let (_, n, width) = prompts.embeddings.dims3()?;
        if n != self.config.context_length || width != self.config.width {
            return Err(Error::Shape(format!(
                "prompt is {n}×{width}, text encoder expects {}×{}",
                self.config.context_length, self.config.width
            )));
        }
        let x = prompts.embeddings.broadcast_add(&self.positional_embedding)?;
        let x = self.transformer.forward(&x, Some(&self.mask))?;
        let x = self.ln_final.forward(&x)?;
        let eos = x.narrow(1, prompts.eos_index, 1)?.squeeze(1)?;
        Ok(eos.matmul(&self.text_projection)?)
    }
}
