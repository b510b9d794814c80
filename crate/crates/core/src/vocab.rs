//! Token vocabulary: bidirectional map between token text and [`Symbol`] ids.

use std::collections::HashMap;
use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token identifier. Valid symbols are `< vocab.len()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(pub u32);

impl Symbol {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A (possibly empty) string of symbols.
pub type TokenString = Vec<Symbol>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, Symbol>,
}

impl Vocab {
    /// Builds a vocabulary where `words[i]` gets id `i`. Duplicates are rejected.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), Symbol(i as u32)).is_some() {
                return Err(Error::invalid("vocab", format!("duplicate token {w:?}")));
            }
        }
        Ok(Vocab { words, ids })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<Symbol> {
        self.ids.get(word).copied()
    }

    pub fn symbol(&self, word: &str) -> Result<Symbol> {
        self.get(word)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn word(&self, sym: Symbol) -> Option<&str> {
        self.words.get(sym.index()).map(String::as_str)
    }

    /// Resolves whitespace-separated text.
    pub fn encode(&self, text: &str) -> Result<TokenString> {
        text.split_whitespace().map(|w| self.symbol(w)).collect()
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Result<TokenString> {
        words.iter().map(|w| self.symbol(w.as_ref())).collect()
    }

    /// Space-joined token text; out-of-range symbols render as `<id>`.
    pub fn decode(&self, syms: &[Symbol]) -> String {
        syms.iter()
            .map(|&s| match self.word(s) {
                Some(w) => w.to_string(),
                None => format!("<{}>", s.0),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

// Serialized as a JSON object `{"token": id, ...}` written in id order.
impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.words.len()))?;
        for (i, w) in self.words.iter().enumerate() {
            map.serialize_entry(w, &i)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct VocabVisitor;

        impl<'de> Visitor<'de> for VocabVisitor {
            type Value = Vocab;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping tokens to ids 0..V")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Vocab, A::Error> {
                let mut pairs: Vec<(String, usize)> = Vec::new();
                while let Some((w, id)) = access.next_entry::<String, usize>()? {
                    pairs.push((w, id));
                }
                let mut words = vec![None; pairs.len()];
                for (w, id) in pairs {
                    match words.get_mut(id) {
                        Some(slot @ None) => *slot = Some(w),
                        Some(Some(_)) => {
                            return Err(serde::de::Error::custom(format!("duplicate id {id}")))
                        }
                        None => {
                            return Err(serde::de::Error::custom(format!(
                                "id {id} out of range for {} tokens",
                                words.len()
                            )))
                        }
                    }
                }
                let words: Vec<String> = words.into_iter().map(|w| w.unwrap()).collect();
                Vocab::new(words).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(VocabVisitor)
    }
}
