use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const BOS: TokenId = TokenId(1);
    pub const EOS: TokenId = TokenId(2);
    pub const UNK: TokenId = TokenId(3);
    pub const MASK: TokenId = TokenId(4);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// PAD, BOS and EOS: framing tokens that are never scored or perturbed.
    /// UNK and MASK stand in for words and count as content.
    pub fn is_framing(self) -> bool {
        self == Self::PAD || self == Self::BOS || self == Self::EOS
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// The reserved tokens usable as replacement or baseline tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialToken {
    Unk,
    Mask,
}

impl SpecialToken {
    pub fn id(self) -> TokenId {
        match self {
            SpecialToken::Unk => TokenId::UNK,
            SpecialToken::Mask => TokenId::MASK,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecialToken::Unk => "unk",
            SpecialToken::Mask => "mask",
        }
    }
}

pub const SPECIAL_TOKENS: [&str; 5] = ["[pad]", "[bos]", "[eos]", "[unk]", "[mask]"];

/// Ordered token table; ids are assigned in insertion order after the five
/// reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            v.insert(s);
        }
        v
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = TokenId(self.tokens.len() as u32);
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(TokenId::UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("unknown token id {id}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Re-expresses ids of `from` in this vocabulary; tokens this vocabulary
    /// lacks become UNK.
    pub fn translate(&self, from: &Vocab, ids: &[TokenId]) -> Result<Vec<TokenId>> {
        ids.iter()
            .map(|&id| from.token(id).map(|t| self.id_or_unk(t)))
            .collect()
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (line_no, line) in text.lines().enumerate() {
            if v.contains(line) {
                return Err(Error::Parse {
                    line: line_no + 1,
                    message: format!("duplicate token {line:?}"),
                });
            }
            v.insert(line);
        }
        if v.tokens.len() < SPECIAL_TOKENS.len()
            || v.tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS
        {
            return Err(Error::Vocab(
                "vocabulary must start with the reserved specials".into(),
            ));
        }
        Ok(v)
    }
}
