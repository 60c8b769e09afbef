use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::backbone::{BackboneProvider, EncoderBundle};
use super::classifier::ClassifierHead;
use super::inversion::InversionNetwork;
use super::params::{Builder, ParamGroup, ParamStore, WeightSource};
use super::prompt::{PromptBatch, PromptTemplate};
use crate::error::{Error, Result};
use crate::seed::{rng_for, stream, SeededRng};

pub const DEFAULT_TEMPLATE: &str = "A photo of a * hand";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub template: String,
    pub placeholder: String,
    pub inversion_dropout: f64,
    /// L2-normalize pseudo-tokens before splicing them into the prompt.
    pub normalize_pseudo_token: bool,
    pub classifier_init_std: f64,
    /// Seed for the freshly initialized layers (inversion network, head).
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            template: DEFAULT_TEMPLATE.into(),
            placeholder: "*".into(),
            inversion_dropout: 0.5,
            normalize_pseudo_token: false,
            classifier_init_std: 0.001,
            init_seed: 0,
        }
    }
}

/// Which image feature to use for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    PostBn,
    PreBn,
}

/// Everything one training step needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub image_pre: Tensor,
    pub image_post: Tensor,
    pub pseudo_tokens: Tensor,
    pub text: Tensor,
    pub logits: Tensor,
}

/// Backbone plus the inversion network, prompt template and classifier head.
pub struct HandIdModel {
    pub store: ParamStore,
    pub bundle: EncoderBundle,
    pub inversion: InversionNetwork,
    pub head: ClassifierHead,
    pub prompt: PromptTemplate,
    pub config: ModelConfig,
}

impl HandIdModel {
    pub fn new(
        provider: &dyn BackboneProvider,
        config: ModelConfig,
        num_classes: usize,
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut store = ParamStore::new(device.clone(), dtype);
        let bundle = provider.build(&mut store)?;
        let dims = bundle.dims;
        let mut source = WeightSource::Init(rng_for(config.init_seed, &[stream::INIT, 1]));
        let mut b = Builder::new(&mut store, &mut source, ParamGroup::NewLayer);
        let inversion =
            InversionNetwork::new(&mut b.push("inversion"), dims.embed_dim, dims.token_dim, config.inversion_dropout)?;
        let head = ClassifierHead::new(&mut b.push("head"), dims.embed_dim, num_classes, config.classifier_init_std)?;
        let tokens = bundle.tokenizer.tokenize_template(&config.template, &config.placeholder, dims.context_length)?;
        let prompt = PromptTemplate::new(&config.template, tokens, &bundle.text_encoder)?;
        Ok(HandIdModel { store, bundle, inversion, head, prompt, config })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn backbone_id(&self) -> &str {
        &self.bundle.id
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn check_pixels(&self, pixels: &Tensor) -> Result<()> {
        let size = self.bundle.dims.image_size;
        match pixels.dims() {
            [_, 3, h, w] if *h == size && *w == size => Ok(()),
            dims => Err(Error::Shape(format!("expected B×3×{size}×{size} pixels, got {dims:?}"))),
        }
    }

    /// Raw image embeddings and their batch-normalized counterparts. In
    /// training mode the batch norm uses batch statistics and updates its
    /// running estimates.
    pub fn encode_images(&self, pixels: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        self.check_pixels(pixels)?;
        let pre = self.bundle.image_encoder.forward(pixels)?;
        let post = self.head.normalize(&pre, train)?;
        Ok((pre, post))
    }

    pub fn invert(&self, image_pre: &Tensor, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        let tokens = self.inversion.forward(image_pre, rng)?;
        if self.config.normalize_pseudo_token {
            let norm = tokens.sqr()?.sum_keepdim(1)?.sqrt()?;
            return Ok(tokens.broadcast_div(&norm)?);
        }
        Ok(tokens)
    }

    pub fn compose_prompt(&self, pseudo_tokens: &Tensor) -> Result<PromptBatch> {
        self.prompt.compose(pseudo_tokens)
    }

    pub fn encode_text(&self, prompts: &PromptBatch) -> Result<Tensor> {
        self.bundle.text_encoder.encode(prompts)
    }

    /// Identity logits from raw image embeddings (batch norm, then linear).
    pub fn classify(&self, image_pre: &Tensor, train: bool) -> Result<Tensor> {
        self.head.logits(&self.head.normalize(image_pre, train)?)
    }

    /// Full training-time forward pass. `dropout_rng` enables dropout;
    /// `train_bn` selects batch statistics for the batch norm.
    pub fn forward(
        &self,
        pixels: &Tensor,
        dropout_rng: Option<&mut SeededRng>,
        train_bn: bool,
    ) -> Result<ForwardOutput> {
        let (image_pre, image_post) = self.encode_images(pixels, train_bn)?;
        let logits = self.head.logits(&image_post)?;
        let pseudo_tokens = self.invert(&image_pre, dropout_rng)?;
        let text = self.encode_text(&self.compose_prompt(&pseudo_tokens)?)?;
        Ok(ForwardOutput { image_pre, image_post, pseudo_tokens, text, logits })
    }

    /// Evaluation-mode retrieval features.
    pub fn extract_features(&self, pixels: &Tensor, kind: FeatureKind) -> Result<Tensor> {
        let (pre, post) = self.encode_images(pixels, false)?;
        Ok(match kind {
            FeatureKind::PostBn => post,
            FeatureKind::PreBn => pre,
        })
    }

    /// Checksum of the parameters that must never change during training.
    pub fn frozen_checksum(&self) -> Result<String> {
        self.store.checksum_group(ParamGroup::Frozen)
    }
}
