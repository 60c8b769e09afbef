use candle_core::Tensor;

use super::layers::{Dropout, LayerNorm, Linear};
use super::params::Builder;
use crate::error::{Error, Result};
use crate::seed::SeededRng;

/// Maps a visual embedding (d) to a pseudo-token in the word-embedding
/// space (D) through three fully-connected layers, tapering d → d →
/// (d+D)/2 → D. The first two layers are followed by layer norm, GELU and
/// dropout; the last by layer norm only.
#[derive(Debug, Clone)]
pub struct InversionNetwork {
    fc1: Linear,
    ln1: LayerNorm,
    fc2: Linear,
    ln2: LayerNorm,
    fc3: Linear,
    ln3: LayerNorm,
    dropout: Dropout,
    in_dim: usize,
}

impl InversionNetwork {
    pub fn new(b: &mut Builder, embed_dim: usize, token_dim: usize, dropout: f64) -> Result<Self> {
        let hidden = (embed_dim + token_dim) / 2;
        Ok(InversionNetwork {
            fc1: Linear::new(&mut b.push("fc1"), embed_dim, embed_dim, true)?,
            ln1: LayerNorm::new(&mut b.push("ln1"), embed_dim)?,
            fc2: Linear::new(&mut b.push("fc2"), embed_dim, hidden, true)?,
            ln2: LayerNorm::new(&mut b.push("ln2"), hidden)?,
            fc3: Linear::new(&mut b.push("fc3"), hidden, token_dim, true)?,
            ln3: LayerNorm::new(&mut b.push("ln3"), token_dim)?,
            dropout: Dropout { p: dropout },
            in_dim: embed_dim,
        })
    }

    /// `B×d` to `B×D`. Dropout is active only when a generator is supplied.
    pub fn forward(&self, x: &Tensor, mut rng: Option<&mut SeededRng>) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.in_dim {
            return Err(Error::Shape(format!("inversion input width {d}, expected {}", self.in_dim)));
        }
        let h = self.ln1.forward(&self.fc1.forward(x)?)?.gelu_erf()?;
        let h = self.dropout.forward(&h, rng.as_deref_mut())?;
        let h = self.ln2.forward(&self.fc2.forward(&h)?)?.gelu_erf()?;
        let h = self.dropout.forward(&h, rng)?;
        self.ln3.forward(&self.fc3.forward(&h)?)
    }
}
