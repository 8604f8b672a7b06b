//! Model vocabulary with fixed special tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::textops::{normalize, TokenLevel, TokenSequence};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const UNK_ID: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Token table mapping between surface text and ids. Ids are stable for a
/// given training corpus: specials first, then unique tokens in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
    pub level: TokenLevel,
}

impl Vocab {
    /// Builds the vocabulary over the normalized token set of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, level: TokenLevel) -> Vocab {
        let mut uniq = std::collections::BTreeSet::new();
        for text in texts {
            for token in tokenize(text, level) {
                uniq.insert(token);
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| (*s).to_string()).collect();
        tokens.extend(uniq);
        let mut vocab = Vocab {
            tokens,
            index: BTreeMap::new(),
            level,
        };
        vocab.rebuild_index();
        vocab
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<unk>")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Normalized text to ids, without any special-token framing.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text, self.level)
            .iter()
            .map(|t| self.id_of(t))
            .collect()
    }

    /// Ids back to text; structural specials are dropped, unknowns render as
    /// their literal token.
    pub fn decode(&self, ids: &[u32]) -> String {
        let pieces: Vec<&str> = ids
            .iter()
            .filter(|&&id| !matches!(id, PAD_ID | BOS_ID | EOS_ID | SEP_ID))
            .map(|&id| self.token_of(id))
            .collect();
        match self.level {
            TokenLevel::Word => pieces.join(" "),
            TokenLevel::Character => pieces.concat(),
        }
    }
}

fn tokenize(text: &str, level: TokenLevel) -> Vec<String> {
    match level {
        TokenLevel::Word => TokenSequence::words(text).tokens,
        TokenLevel::Character => normalize(text).chars().map(String::from).collect(),
    }
}
