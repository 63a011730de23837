//! Whitespace tokenizer with a fixed, sorted vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercase whitespace tokenizer. Ids 0..=3 are pad, begin, end, unknown;
/// the word list follows in sorted order, so a vocabulary is a pure
/// function of the fitted corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

impl Tokenizer {
    /// Build the vocabulary from every whitespace token in `texts`.
    pub fn fit<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut seen: Vec<String> = texts.iter().flat_map(|t| words(t.as_ref())).collect();
        seen.sort();
        seen.dedup();
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(seen.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        Self::from_vocab(vocab).expect("fitted vocabulary is well-formed")
    }

    /// Rebuild from a serialized vocabulary list (checkpoint load).
    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < SPECIALS.len() {
            return Err(Error::schema("tokenizer vocabulary missing special tokens"));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if vocab[i] != *s {
                return Err(Error::schema(format!(
                    "tokenizer vocabulary slot {i} must be {s:?}, found {:?}",
                    vocab[i]
                )));
            }
        }
        let lookup = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self { vocab, lookup })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Token ids for a text; words outside the vocabulary map to unknown.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text)
            .map(|w| self.lookup.get(&w).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Words for a sequence of ids, specials skipped, space-joined.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= SPECIALS.len() && id < self.vocab.len())
            .map(|&id| self.vocab[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Restore the lookup map dropped by serde(skip).
pub fn rebuild_lookup(tokenizer: Tokenizer) -> Result<Tokenizer> {
    Tokenizer::from_vocab(tokenizer.vocab)
}
