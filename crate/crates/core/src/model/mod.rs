//! The dual-encoder backbone, textual inversion, prompt composition and the
//! batch-normalized classifier head.

mod backbone;
mod checkpoint;
mod classifier;
mod inversion;
pub mod layers;
mod network;
pub mod params;
mod prompt;
mod text;
mod tokenizer;
mod vision;

pub use backbone::{
    BackboneDims, BackboneProvider, EncoderBundle, Normalization, PretrainedBackbone, PretrainedConfig, StubBackbone,
    StubConfig, PRETRAINED_MEAN, PRETRAINED_STD,
};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_SCHEMA_VERSION};
pub use classifier::ClassifierHead;
pub use inversion::InversionNetwork;
pub use network::{FeatureKind, ForwardOutput, HandIdModel, ModelConfig, DEFAULT_TEMPLATE};
pub use params::{ParamGroup, ParamStore};
pub use prompt::{PromptBatch, PromptTemplate};
pub use text::{TextConfig, TextTransformer};
pub use tokenizer::{PretokenizedTemplate, TokenizedTemplate, Tokenizer};
pub use vision::{ImageEncoder, VisionConfig};
