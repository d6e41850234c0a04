//! Closed word-level vocabulary.
//!
//! Every word of the synthetic world is exactly one token, so whole-word
//! masking is exact and a "single token" filter reduces to vocabulary
//! membership. Ids 0..3 are reserved for the special tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[MASK]", "[CLS]", "[SEP]"];

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build a vocabulary from content words, specials first. Duplicate words
    /// are rejected: the closed world relies on one id per surface form.
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for word in words {
            if index.contains_key(&word) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary word `{word}`"
                )));
            }
            index.insert(word.clone(), tokens.len() as u32);
            tokens.push(word);
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn require_id(&self, word: &str) -> Result<u32> {
        self.id(word).ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// Ids of ordinary (non-special) tokens.
    pub fn content_ids(&self) -> std::ops::Range<u32> {
        SPECIAL_TOKENS.len() as u32..self.tokens.len() as u32
    }

    /// Exact whitespace-word lookup. Empty input gives an empty sequence;
    /// an out-of-vocabulary word is an error naming the word.
    pub fn tokenize(&self, sentence: &str) -> Result<Vec<u32>> {
        sentence.split_whitespace().map(|w| self.require_id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            match lines.next() {
                Some(line) if line == *special => {}
                other => {
                    return Err(Error::MalformedLine {
                        line: i + 1,
                        detail: format!("expected special token `{special}`, found {other:?}"),
                    })
                }
            }
        }
        Vocab::new(lines.map(|l| l.to_string()))
    }
}
