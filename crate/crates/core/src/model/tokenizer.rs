//! Prompt tokenization. Subword tokenization belongs to the backbone; this
//! module only exposes what the prompt composer needs: the template's token
//! ids, where the placeholder sits, and where the end token sits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedTemplate {
    /// Exactly `context_length` ids, zero-padded after the end token.
    pub ids: Vec<u32>,
    pub placeholder_index: usize,
    pub eos_index: usize,
}

/// Token ids for a template as produced by the backbone's own tokenizer,
/// start and end tokens included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretokenizedTemplate {
    pub ids: Vec<u32>,
    pub placeholder_index: usize,
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    /// Whitespace word tokenizer with hashed ids, for the stub backbone.
    /// Start and end tokens take the two highest ids, as in the pretrained
    /// vocabulary.
    Word { vocab_size: u32 },
    /// Templates tokenized ahead of time by the pretrained tokenizer.
    Pretokenized(BTreeMap<String, PretokenizedTemplate>),
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Tokenizer {
    pub fn tokenize_template(
        &self,
        template: &str,
        placeholder: &str,
        context_length: usize,
    ) -> Result<TokenizedTemplate> {
        let (mut ids, placeholder_index) = match self {
            Tokenizer::Word { vocab_size } => {
                let (sos, eos) = (vocab_size - 2, vocab_size - 1);
                let words: Vec<&str> = template.split_whitespace().collect();
                let slots: Vec<usize> =
                    words.iter().enumerate().filter(|(_, w)| **w == placeholder).map(|(i, _)| i + 1).collect();
                if slots.len() != 1 {
                    return Err(Error::Config(format!(
                        "template {template:?} must contain the placeholder {placeholder:?} exactly once"
                    )));
                }
                let mut ids = vec![sos];
                ids.extend(words.iter().map(|w| 1 + (fnv1a(&w.to_lowercase()) % (*vocab_size as u64 - 3)) as u32));
                ids.push(eos);
                (ids, slots[0])
            }
            Tokenizer::Pretokenized(map) => {
                let t = map.get(template).ok_or_else(|| {
                    Error::Config(format!("template {template:?} was not tokenized for this backbone"))
                })?;
                if t.placeholder_index == 0 || t.placeholder_index + 1 >= t.ids.len() {
                    return Err(Error::Config(format!("template {template:?} has no placeholder slot")));
                }
                (t.ids.clone(), t.placeholder_index)
            }
        };
        if ids.len() > context_length {
            return Err(Error::Config(format!(
                "template needs {} tokens, context length is {context_length}",
                ids.len()
            )));
        }
        let eos_index = ids.len() - 1;
        ids.resize(context_length, PAD_ID);
        Ok(TokenizedTemplate { ids, placeholder_index, eos_index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_template_layout() {
        let t = Tokenizer::Word { vocab_size: 1000 }.tokenize_template("A photo of a * hand", "*", 77).unwrap();
        assert_eq!(t.ids.len(), 77);
        assert_eq!(t.placeholder_index, 5);
        assert_eq!(t.eos_index, 7);
        assert_eq!(t.ids[0], 998);
        assert_eq!(t.ids[7], 999);
        // "A" and "a" share an id.
        assert_eq!(t.ids[1], t.ids[4]);
        assert!(t.ids[8..].iter().all(|&i| i == PAD_ID));
    }

    #[test]
    fn missing_placeholder_is_a_config_error() {
        let err = Tokenizer::Word { vocab_size: 100 }.tokenize_template("A photo of a hand", "*", 77).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overlong_template_is_rejected() {
        assert!(Tokenizer::Word { vocab_size: 100 }.tokenize_template("a b c * d", "*", 4).is_err());
    }
}
