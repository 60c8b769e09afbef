//! Dual-encoder backbones behind a common provider interface.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::params::{Builder, ParamGroup, ParamStore, WeightSource};
use super::text::{TextConfig, TextTransformer};
use super::tokenizer::{PretokenizedTemplate, Tokenizer};
use super::vision::{ImageEncoder, VisionConfig};
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream};

/// Pixel statistics of the backbone's pretraining data.
pub const PRETRAINED_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const PRETRAINED_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: PRETRAINED_MEAN, std: PRETRAINED_STD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneDims {
    /// Shared embedding dimension d.
    pub embed_dim: usize,
    /// Token embedding dimension D.
    pub token_dim: usize,
    pub context_length: usize,
    pub image_size: usize,
}

/// Image encoder (trainable), text encoder and token embedder (frozen), and
/// the tokenizer that goes with them.
pub struct EncoderBundle {
    pub id: String,
    pub image_encoder: ImageEncoder,
    pub text_encoder: TextTransformer,
    pub tokenizer: Tokenizer,
    pub dims: BackboneDims,
    pub normalization: Normalization,
}

/// Builds an [`EncoderBundle`], registering its parameters in `store`:
/// image-encoder weights under `visual.*` in [`ParamGroup::Pretrained`],
/// everything on the text side in [`ParamGroup::Frozen`].
pub trait BackboneProvider {
    fn id(&self) -> String;
    fn build(&self, store: &mut ParamStore) -> Result<EncoderBundle>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub token_dim: usize,
    pub context_length: usize,
    pub vocab_size: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub image_size: usize,
    pub pool: usize,
    pub image_hidden: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            seed: 0,
            embed_dim: 32,
            token_dim: 32,
            context_length: 77,
            vocab_size: 512,
            text_layers: 1,
            text_heads: 2,
            image_size: 224,
            pool: 16,
            image_hidden: 64,
        }
    }
}

/// Small deterministic backbone: a randomly initialized frozen text
/// transformer and a tiny trainable image encoder. Same code paths as the
/// pretrained backbone, sized for tests.
#[derive(Debug, Clone, Default)]
pub struct StubBackbone {
    pub config: StubConfig,
}

impl StubBackbone {
    pub fn new(config: StubConfig) -> Self {
        StubBackbone { config }
    }
}

impl BackboneProvider for StubBackbone {
    fn id(&self) -> String {
        let c = &self.config;
        format!(
            "stub(seed={},d={},D={},ctx={},vocab={},layers={},heads={},img={},pool={},hidden={})",
            c.seed,
            c.embed_dim,
            c.token_dim,
            c.context_length,
            c.vocab_size,
            c.text_layers,
            c.text_heads,
            c.image_size,
            c.pool,
            c.image_hidden
        )
    }

    fn build(&self, store: &mut ParamStore) -> Result<EncoderBundle> {
        let c = &self.config;
        let vision = VisionConfig::Stub { image_size: c.image_size, pool: c.pool, hidden: c.image_hidden };
        let text = TextConfig {
            vocab_size: c.vocab_size,
            context_length: c.context_length,
            width: c.token_dim,
            layers: c.text_layers,
            heads: c.text_heads,
        };
        let mut source = WeightSource::Init(rng_for(c.seed, &[stream::INIT]));
        let image_encoder = ImageEncoder::new(
            &mut Builder::new(store, &mut source, ParamGroup::Pretrained).push("visual"),
            &vision,
            c.embed_dim,
        )?;
        let text_encoder =
            TextTransformer::new(&mut Builder::new(store, &mut source, ParamGroup::Frozen), &text, c.embed_dim)?;
        Ok(EncoderBundle {
            id: self.id(),
            image_encoder,
            text_encoder,
            tokenizer: Tokenizer::Word { vocab_size: c.vocab_size as u32 },
            dims: BackboneDims {
                embed_dim: c.embed_dim,
                token_dim: c.token_dim,
                context_length: c.context_length,
                image_size: c.image_size,
            },
            normalization: Normalization::default(),
        })
    }
}

/// Architecture description shipped next to converted pretrained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedConfig {
    pub name: String,
    pub embed_dim: usize,
    pub vision: VisionConfig,
    pub text: TextConfig,
    #[serde(default)]
    pub normalization: Normalization,
    /// Templates tokenized by the backbone's own tokenizer.
    pub templates: BTreeMap<String, PretokenizedTemplate>,
}

impl PretrainedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Pretrained dual encoder loaded from a safetensors file whose tensor names
/// follow the original release (`visual.*`, `token_embedding.weight`,
/// `transformer.resblocks.*`, `ln_final.*`, `text_projection`, ...).
#[derive(Debug, Clone)]
pub struct PretrainedBackbone {
    pub config: PretrainedConfig,
    pub weights: PathBuf,
}

impl PretrainedBackbone {
    pub fn open(config_path: &Path, weights: &Path) -> Result<Self> {
        if !weights.exists() {
            return Err(Error::MissingPath(weights.to_path_buf()));
        }
        Ok(PretrainedBackbone { config: PretrainedConfig::read(config_path)?, weights: weights.to_path_buf() })
    }

    fn load_tensors(&self, device: &Device) -> Result<HashMap<String, Tensor>> {
        Ok(candle_core::safetensors::load(&self.weights, device)?)
    }
}

impl BackboneProvider for PretrainedBackbone {
    fn id(&self) -> String {
        format!("pretrained({})", self.config.name)
    }

    fn build(&self, store: &mut ParamStore) -> Result<EncoderBundle> {
        let c = &self.config;
        let mut source = WeightSource::Pretrained(self.load_tensors(&store.device().clone())?);
        let image_encoder = ImageEncoder::new(
            &mut Builder::new(store, &mut source, ParamGroup::Pretrained).push("visual"),
            &c.vision,
            c.embed_dim,
        )?;
        let text_encoder =
            TextTransformer::new(&mut Builder::new(store, &mut source, ParamGroup::Frozen), &c.text, c.embed_dim)?;
        Ok(EncoderBundle {
            id: self.id(),
            image_encoder,
            text_encoder,
            tokenizer: Tokenizer::Pretokenized(c.templates.clone()),
            dims: BackboneDims {
                embed_dim: c.embed_dim,
                token_dim: c.text.width,
                context_length: c.text.context_length,
                image_size: c.vision.image_size(),
            },
            normalization: c.normalization,
        })
    }
}
