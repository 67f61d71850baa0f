use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// Bidirectional token table. Ids are dense from 0 and the first three are reserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED.iter().copied().chain(words) {
            if !v.index.contains_key(w) {
                v.index.insert(w.to_string(), v.tokens.len());
                v.tokens.push(w.to_string());
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined words, stopping at EOS and skipping reserved tokens.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i > EOS)
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable fingerprint used to match checkpoints to corpora.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", crate::rng::fnv1a(self.tokens.join("\u{1f}").as_bytes()))
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[..3] != RESERVED {
            return Err(Error::Corpus("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Token ids of one caption: words followed by exactly one EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CaptionTokens(Vec<usize>);

impl CaptionTokens {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        let eos_count = ids.iter().filter(|&&i| i == EOS).count();
        if eos_count != 1 || ids.last() != Some(&EOS) {
            return Err(Error::Corpus("caption must end with exactly one EOS".into()));
        }
        if ids.len() < 2 {
            return Err(Error::Corpus("caption needs at least one word".into()));
        }
        if ids.iter().any(|&i| i == PAD || i == BOS) {
            return Err(Error::Corpus("caption contains PAD or BOS".into()));
        }
        Ok(CaptionTokens(ids))
    }

    /// All ids including the trailing EOS.
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    /// Word ids without EOS.
    pub fn words(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }
}

impl TryFrom<Vec<usize>> for CaptionTokens {
    type Error = Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        CaptionTokens::new(ids)
    }
}

impl From<CaptionTokens> for Vec<usize> {
    fn from(c: CaptionTokens) -> Self {
        c.0
    }
}
