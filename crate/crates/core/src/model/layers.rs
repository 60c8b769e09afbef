//! Differentiable building blocks written against candle primitives.

use candle_core::{DType, Tensor, Var, D};
use rand::Rng;

use super::params::{Builder, Init};
use crate::error::{Error, Result};
use crate::seed::SeededRng;

pub fn quick_gelu(x: &Tensor) -> Result<Tensor> {
    let gate = ((x * -1.702)?.exp()? + 1.0)?.recip()?;
    Ok((x * gate)?)
}

/// Softmax along the last dimension with max subtraction. The max is
/// detached: it cancels analytically and only guards against overflow.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Log-softmax along `dim` via the log-sum-exp identity.
pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    /// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(b: &mut Builder, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(b, in_dim, out_dim, bias, Init::Uniform(bound), Init::Uniform(bound))
    }

    pub fn with_init(
        b: &mut Builder,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        weight_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        let weight = b.tensor("weight", &[out_dim, in_dim], weight_init)?;
        let bias = if bias { Some(b.tensor("bias", &[out_dim], bias_init)?) } else { None };
        Ok(Linear { weight, bias })
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Linear { weight, bias }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            weight: b.tensor("weight", &[dim], Init::Ones)?,
            bias: b.tensor("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Batch normalization over the feature dimension of a `B×d` input. The
/// learned scale is trainable; the shift is frozen at its stored value
/// (zero for a fresh head).
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm1d {
    pub fn new(b: &mut Builder, dim: usize) -> Result<Self> {
        Ok(BatchNorm1d {
            weight: b.tensor("weight", &[dim], Init::Ones)?,
            bias: b.buffer("bias", &[dim], Init::Zeros)?.as_detached_tensor(),
            running_mean: b.buffer("running_mean", &[dim], Init::Zeros)?,
            running_var: b.buffer("running_var", &[dim], Init::Ones)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let normed = if train {
            let n = x.dim(0)?;
            if n < 2 {
                return Err(Error::Shape("batch norm in training mode needs at least 2 samples".into()));
            }
            let mean = x.mean_keepdim(0)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?;
            let unbiased = (var.detach() * (n as f64 / (n as f64 - 1.0)))?.squeeze(0)?;
            let m = self.momentum;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().squeeze(0)? * m)?)?)?;
            self.running_var.set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            centered.broadcast_div(&(var + self.eps)?.sqrt()?)?
        } else {
            let mean = self.running_mean.as_detached_tensor();
            let var = self.running_var.as_detached_tensor();
            x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?
        };
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Batch normalization for `B×C×H×W` feature maps, always applied with the
/// stored running statistics (pretrained backbone layers are fine-tuned with
/// small batches, where batch statistics are unreliable).
#[derive(Debug, Clone)]
pub struct FrozenStatsBatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    eps: f64,
}

impl FrozenStatsBatchNorm2d {
    pub fn new(b: &mut Builder, channels: usize) -> Result<Self> {
        Ok(FrozenStatsBatchNorm2d {
            weight: b.tensor("weight", &[channels], Init::Ones)?,
            bias: b.tensor("bias", &[channels], Init::Zeros)?,
            running_mean: b.buffer("running_mean", &[channels], Init::Zeros)?.as_detached_tensor(),
            running_var: b.buffer("running_var", &[channels], Init::Ones)?.as_detached_tensor(),
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = (1, (), 1, 1);
        let scale = self.weight.broadcast_div(&(&self.running_var + self.eps)?.sqrt()?)?.reshape(shape)?;
        let shift = self.bias.reshape(shape)?;
        let mean = self.running_mean.reshape(shape)?;
        Ok(x.broadcast_sub(&mean)?.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Inverted dropout with an explicitly seeded mask generator. Passing no
/// generator means evaluation mode (identity).
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn forward(&self, x: &Tensor, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        let Some(rng) = rng else {
            return Ok(x.clone());
        };
        if self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f64> =
            (0..x.elem_count()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

/// Multi-head attention with a fused input projection, named like the
/// pretrained checkpoints (`in_proj_weight`, `out_proj.*`).
#[derive(Debug, Clone)]
pub struct MultiheadAttention {
    in_proj: Linear,
    out_proj: Linear,
    heads: usize,
}

impl MultiheadAttention {
    pub fn new(b: &mut Builder, width: usize, heads: usize) -> Result<Self> {
        if !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {width} not divisible by {heads} heads")));
        }
        let bound = (6.0 / (4.0 * width as f64)).sqrt();
        let in_proj = Linear::from_tensors(
            b.tensor("in_proj_weight", &[3 * width, width], Init::Uniform(bound))?,
            Some(b.tensor("in_proj_bias", &[3 * width], Init::Zeros)?),
        );
        let out_proj = Linear::new(&mut b.push("out_proj"), width, width, true)?;
        Ok(MultiheadAttention { in_proj, out_proj, heads })
    }

    /// `x` is `B×N×W`; `mask` is an additive `N×N` mask.
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (batch, n, width) = x.dims3()?;
        let head_dim = width / self.heads;
        let qkv = self.in_proj.forward(x)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * width, width)?
                .reshape((batch, n, self.heads, head_dim))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?)? * scale)?;
        if let Some(mask) = mask {
            scores = scores.broadcast_add(mask)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((batch, n, width))?;
        self.out_proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualAttentionBlock {
    ln_1: LayerNorm,
    attn: MultiheadAttention,
    ln_2: LayerNorm,
    c_fc: Linear,
    c_proj: Linear,
}

impl ResidualAttentionBlock {
    pub fn new(b: &mut Builder, width: usize, heads: usize) -> Result<Self> {
        let mut mlp = b.push("mlp");
        let c_fc = Linear::new(&mut mlp.push("c_fc"), width, 4 * width, true)?;
        let c_proj = Linear::new(&mut mlp.push("c_proj"), 4 * width, width, true)?;
        Ok(ResidualAttentionBlock {
            ln_1: LayerNorm::new(&mut b.push("ln_1"), width)?,
            attn: MultiheadAttention::new(&mut b.push("attn"), width, heads)?,
            ln_2: LayerNorm::new(&mut b.push("ln_2"), width)?,
            c_fc,
            c_proj,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln_1.forward(x)?, mask)?)?;
        let hidden = quick_gelu(&self.c_fc.forward(&self.ln_2.forward(&x)?)?)?;
        Ok((&x + self.c_proj.forward(&hidden)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    blocks: Vec<ResidualAttentionBlock>,
}

impl Transformer {
    pub fn new(b: &mut Builder, width: usize, layers: usize, heads: usize) -> Result<Self> {
        let mut res = b.push("resblocks");
        let blocks = (0..layers)
            .map(|i| ResidualAttentionBlock::new(&mut res.push(&i.to_string()), width, heads))
            .collect::<Result<_>>()?;
        Ok(Transformer { blocks })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        self.blocks.iter().try_fold(x.clone(), |x, block| block.forward(&x, mask))
    }
}

/// Additive causal mask: zero on and below the diagonal, a large negative
/// value above it.
pub fn causal_mask(n: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let values: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| if j > i { -1e9 } else { 0.0 })).collect();
    Ok(Tensor::from_vec(values, (n, n), device)?.to_dtype(dtype)?)
}
