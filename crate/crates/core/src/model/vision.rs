//! Image encoders: the two pretrained architectures and a small stub.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{FrozenStatsBatchNorm2d, LayerNorm, Linear, Transformer};
use super::params::{Builder, Init};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VisionConfig {
    Vit { image_size: usize, patch_size: usize, width: usize, layers: usize, heads: usize },
    Resnet { image_size: usize, layers: [usize; 4], width: usize, heads: usize },
    Stub { image_size: usize, pool: usize, hidden: usize },
}

impl VisionConfig {
    pub fn image_size(&self) -> usize {
        match self {
            VisionConfig::Vit { image_size, .. }
            | VisionConfig::Resnet { image_size, .. }
            | VisionConfig::Stub { image_size, .. } => *image_size,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ImageEncoder {
    Vit(VisionTransformer),
    Resnet(ModifiedResNet),
    Stub(StubImageEncoder),
}

impl ImageEncoder {
    pub fn new(b: &mut Builder, config: &VisionConfig, embed_dim: usize) -> Result<Self> {
        Ok(match config {
            VisionConfig::Vit { image_size, patch_size, width, layers, heads } => ImageEncoder::Vit(
                VisionTransformer::new(b, *image_size, *patch_size, *width, *layers, *heads, embed_dim)?,
            ),
            VisionConfig::Resnet { image_size, layers, width, heads } => {
                ImageEncoder::Resnet(ModifiedResNet::new(b, *image_size, *layers, *width, *heads, embed_dim)?)
            }
            VisionConfig::Stub { image_size, pool, hidden } => {
                ImageEncoder::Stub(StubImageEncoder::new(b, *image_size, *pool, *hidden, embed_dim)?)
            }
        })
    }

    /// `B×3×H×W` pixels to `B×d` embeddings.
    pub fn forward(&self, pixels: &Tensor) -> Result<Tensor> {
        match self {
            ImageEncoder::Vit(m) => m.forward(pixels),
            ImageEncoder::Resnet(m) => m.forward(pixels),
            ImageEncoder::Stub(m) => m.forward(pixels),
        }
    }
}

/// Average-pools the image to a coarse grid and maps it through a two-layer
/// perceptron. Cheap enough to train on a CPU in tests.
#[derive(Debug, Clone)]
pub struct StubImageEncoder {
    pool: usize,
    fc1: Linear,
    fc2: Linear,
}

impl StubImageEncoder {
    pub fn new(b: &mut Builder, image_size: usize, pool: usize, hidden: usize, embed_dim: usize) -> Result<Self> {
        if pool == 0 || !image_size.is_multiple_of(pool) {
            return Err(Error::Config(format!("pool {pool} must divide image size {image_size}")));
        }
        let grid = image_size / pool;
        let mut stub = b.push("stub");
        Ok(StubImageEncoder {
            pool,
            fc1: Linear::new(&mut stub.push("fc1"), 3 * grid * grid, hidden, true)?,
            fc2: Linear::new(&mut stub.push("fc2"), hidden, embed_dim, true)?,
        })
    }

    pub fn forward(&self, pixels: &Tensor) -> Result<Tensor> {
        let pooled = pixels.avg_pool2d(self.pool)?.flatten_from(1)?;
        let h = self.fc1.forward(&pooled)?.gelu_erf()?;
        self.fc2.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct VisionTransformer {
    conv1: Tensor,
    patch_size: usize,
    class_embedding: Tensor,
    positional_embedding: Tensor,
    ln_pre: LayerNorm,
    transformer: Transformer,
    ln_post: LayerNorm,
    proj: Tensor,
}

impl VisionTransformer {
    pub fn new(
        b: &mut Builder,
        image_size: usize,
        patch_size: usize,
        width: usize,
        layers: usize,
        heads: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if !image_size.is_multiple_of(patch_size) {
            return Err(Error::Config(format!("patch {patch_size} must divide image size {image_size}")));
        }
        let grid = image_size / patch_size;
        let scale = (width as f64).powf(-0.5);
        let fan_in = 3 * patch_size * patch_size;
        Ok(VisionTransformer {
            conv1: b.push("conv1").tensor(
                "weight",
                &[width, 3, patch_size, patch_size],
                Init::Uniform(1.0 / (fan_in as f64).sqrt()),
            )?,
            patch_size,
            class_embedding: b.tensor("class_embedding", &[width], Init::Normal(scale))?,
            positional_embedding: b.tensor("positional_embedding", &[grid * grid + 1, width], Init::Normal(scale))?,
            ln_pre: LayerNorm::new(&mut b.push("ln_pre"), width)?,
            transformer: Transformer::new(&mut b.push("transformer"), width, layers, heads)?,
            ln_post: LayerNorm::new(&mut b.push("ln_post"), width)?,
            proj: b.tensor("proj", &[width, embed_dim], Init::Normal(scale))?,
        })
    }

    pub fn forward(&self, pixels: &Tensor) -> Result<Tensor> {
        let x = pixels.conv2d(&self.conv1, 0, self.patch_size, 1, 1)?;
        let (batch, width, _, _) = x.dims4()?;
        let x = x.flatten_from(2)?.transpose(1, 2)?;
        let cls = self.class_embedding.reshape((1, 1, width))?.broadcast_as((batch, 1, width))?;
        let x = Tensor::cat(&[&cls.contiguous()?, &x.contiguous()?], 1)?;
        let x = x.broadcast_add(&self.positional_embedding)?;
        let x = self.ln_pre.forward(&x)?;
        let x = self.transformer.forward(&x, None)?;
        let cls = self.ln_post.forward(&x.narrow(1, 0, 1)?.squeeze(1)?)?;
        Ok(cls.matmul(&self.proj)?)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: Tensor,
    padding: usize,
    stride: usize,
}

impl Conv {
    fn new(b: &mut Builder, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        let fan_in = c_in * k * k;
        Ok(Conv {
            weight: b.tensor("weight", &[c_out, c_in, k, k], Init::Normal((2.0 / fan_in as f64).sqrt()))?,
            padding,
            stride,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?)
    }
}

fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    Ok(if k > 1 { x.avg_pool2d(k)? } else { x.clone() })
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv,
    bn1: FrozenStatsBatchNorm2d,
    conv2: Conv,
    bn2: FrozenStatsBatchNorm2d,
    conv3: Conv,
    bn3: FrozenStatsBatchNorm2d,
    stride: usize,
    downsample: Option<(Conv, FrozenStatsBatchNorm2d)>,
}

impl Bottleneck {
    const EXPANSION: usize = 4;

    fn new(b: &mut Builder, inplanes: usize, planes: usize, stride: usize) -> Result<Self> {
        let out = planes * Self::EXPANSION;
        let downsample = if stride > 1 || inplanes != out {
            let mut ds = b.push("downsample");
            Some((
                Conv::new(&mut ds.push("0"), inplanes, out, 1, 1, 0)?,
                FrozenStatsBatchNorm2d::new(&mut ds.push("1"), out)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: Conv::new(&mut b.push("conv1"), inplanes, planes, 1, 1, 0)?,
            bn1: FrozenStatsBatchNorm2d::new(&mut b.push("bn1"), planes)?,
            conv2: Conv::new(&mut b.push("conv2"), planes, planes, 3, 1, 1)?,
            bn2: FrozenStatsBatchNorm2d::new(&mut b.push("bn2"), planes)?,
            conv3: Conv::new(&mut b.push("conv3"), planes, out, 1, 1, 0)?,
            bn3: FrozenStatsBatchNorm2d::new(&mut b.push("bn3"), out)?,
            stride,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        let out = self.bn2.forward(&self.conv2.forward(&out)?)?.relu()?;
        let out = avg_pool(&out, self.stride)?;
        let out = self.bn3.forward(&self.conv3.forward(&out)?)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(&avg_pool(x, self.stride)?)?)?,
            None => x.clone(),
        };
        Ok((out + identity)?.relu()?)
    }
}

/// Attention pooling over the final feature map: the mean-pooled token
/// queries every spatial token.
#[derive(Debug, Clone)]
struct AttentionPool {
    positional_embedding: Tensor,
    q_proj: Linear,
    k_proj: Linear,
    v_proj: Linear,
    c_proj: Linear,
    heads: usize,
}

impl AttentionPool {
    fn new(b: &mut Builder, spatial: usize, width: usize, heads: usize, out_dim: usize) -> Result<Self> {
        let scale = (width as f64).powf(-0.5);
        Ok(AttentionPool {
            positional_embedding: b.tensor(
                "positional_embedding",
                &[spatial * spatial + 1, width],
                Init::Normal(scale),
            )?,
            q_proj: Linear::new(&mut b.push("q_proj"), width, width, true)?,
            k_proj: Linear::new(&mut b.push("k_proj"), width, width, true)?,
            v_proj: Linear::new(&mut b.push("v_proj"), width, width, true)?,
            c_proj: Linear::new(&mut b.push("c_proj"), width, out_dim, true)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, width, _, _) = x.dims4()?;
        let tokens = x.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let mean = tokens.mean_keepdim(1)?;
        let tokens = Tensor::cat(&[&mean, &tokens], 1)?.broadcast_add(&self.positional_embedding)?;
        let n = tokens.dim(1)?;
        let head_dim = width / self.heads;
        let heads = |t: Tensor, len: usize| -> Result<Tensor> {
            Ok(t.reshape((batch, len, self.heads, head_dim))?.transpose(1, 2)?.contiguous()?)
        };
        let q = heads(self.q_proj.forward(&tokens.narrow(1, 0, 1)?)?, 1)?;
        let k = heads(self.k_proj.forward(&tokens)?, n)?;
        let v = heads(self.v_proj.forward(&tokens)?, n)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (head_dim as f64).sqrt()))?;
        let attn = super::layers::softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((batch, width))?;
        self.c_proj.forward(&out)
    }
}

/// Residual CNN with a three-convolution stem, anti-aliased strided
/// bottlenecks and attention pooling.
#[derive(Debug, Clone)]
pub struct ModifiedResNet {
    stem: Vec<(Conv, FrozenStatsBatchNorm2d)>,
    layers: Vec<Vec<Bottleneck>>,
    attnpool: AttentionPool,
}

impl ModifiedResNet {
    pub fn new(
        b: &mut Builder,
        image_size: usize,
        layers: [usize; 4],
        width: usize,
        heads: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if !image_size.is_multiple_of(32) {
            return Err(Error::Config(format!("image size {image_size} must be a multiple of 32")));
        }
        let half = width / 2;
        let stem = vec![
            (
                Conv::new(&mut b.push("conv1"), 3, half, 3, 2, 1)?,
                FrozenStatsBatchNorm2d::new(&mut b.push("bn1"), half)?,
            ),
            (
                Conv::new(&mut b.push("conv2"), half, half, 3, 1, 1)?,
                FrozenStatsBatchNorm2d::new(&mut b.push("bn2"), half)?,
            ),
            (
                Conv::new(&mut b.push("conv3"), half, width, 3, 1, 1)?,
                FrozenStatsBatchNorm2d::new(&mut b.push("bn3"), width)?,
            ),
        ];
        let mut inplanes = width;
        let mut stages = Vec::new();
        for (i, &blocks) in layers.iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut stage_builder = b.push(&format!("layer{}", i + 1));
            let mut stage = Vec::new();
            for j in 0..blocks {
                stage.push(Bottleneck::new(
                    &mut stage_builder.push(&j.to_string()),
                    inplanes,
                    planes,
                    if j == 0 { stride } else { 1 },
                )?);
                inplanes = planes * Bottleneck::EXPANSION;
            }
            stages.push(stage);
        }
        let attnpool = AttentionPool::new(&mut b.push("attnpool"), image_size / 32, width * 32, heads, embed_dim)?;
        Ok(ModifiedResNet { stem, layers: stages, attnpool })
    }

    pub fn forward(&self, pixels: &Tensor) -> Result<Tensor> {
        let mut x = pixels.clone();
        for (conv, bn) in &self.stem {
            x = bn.forward(&conv.forward(&x)?)?.relu()?;
        }
        x = x.avg_pool2d(2)?;
        for stage in &self.layers {
            for block in stage {
                x = block.forward(&x)?;
            }
        }
        self.attnpool.forward(&x)
    }
}
