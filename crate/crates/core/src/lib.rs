//! Hand-based person identification by fine-tuning the image tower of a
//! dual-encoder vision-language model under prompt guidance.
//!
//! Each image embedding is inverted into a pseudo-token, spliced into the
//! fixed prompt `"A photo of a * hand"`, and encoded by the frozen text
//! tower; identity cross-entropy plus a symmetric supervised contrastive
//! loss train the image tower, inversion network and classifier head.

pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
