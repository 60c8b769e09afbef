use candle_core::Tensor;

use super::text::TextTransformer;
use super::tokenizer::TokenizedTemplate;
use crate::error::{Error, Result};

/// A prompt template tokenized and embedded once, with one placeholder slot.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub text: String,
    pub tokens: TokenizedTemplate,
    /// `N_ctx×D` frozen embeddings of the template tokens.
    embeddings: Tensor,
}

/// Token-embedding sequences ready for the text encoder.
#[derive(Debug, Clone)]
pub struct PromptBatch {
    /// `B×N_ctx×D`.
    pub embeddings: Tensor,
    pub placeholder_index: usize,
    pub eos_index: usize,
}

impl PromptTemplate {
    pub fn new(text: &str, tokens: TokenizedTemplate, encoder: &TextTransformer) -> Result<Self> {
        let embeddings = encoder.embed_tokens(&tokens.ids)?.detach();
        Ok(PromptTemplate { text: text.to_string(), tokens, embeddings })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    /// Replaces the placeholder's word embedding with each row of
    /// `pseudo_tokens` (`B×D`). Every other position is the template's own
    /// embedding.
    pub fn compose(&self, pseudo_tokens: &Tensor) -> Result<PromptBatch> {
        let (batch, dim) = pseudo_tokens.dims2()?;
        let (n, width) = self.embeddings.dims2()?;
        if dim != width {
            return Err(Error::Shape(format!("pseudo-token width {dim}, token width {width}")));
        }
        let slot = self.tokens.placeholder_index;
        let prefix = self.embeddings.narrow(0, 0, slot)?.unsqueeze(0)?.broadcast_as((batch, slot, width))?;
        let tail = n - slot - 1;
        let suffix = self.embeddings.narrow(0, slot + 1, tail)?.unsqueeze(0)?.broadcast_as((batch, tail, width))?;
        let embeddings = Tensor::cat(&[&prefix.contiguous()?, &pseudo_tokens.unsqueeze(1)?, &suffix.contiguous()?], 1)?;
        Ok(PromptBatch { embeddings, placeholder_index: slot, eos_index: self.tokens.eos_index })
    }
}
