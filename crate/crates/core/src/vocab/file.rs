//! Vocabulary file format.
//!
//! ```json
//! {"tokens": ["a", "b", "ab", "<bos>"], "specials": [3], "special_roles": {"bos": 3}}
//! ```
//!
//! `tokens` may also be an object mapping token → id, and a bare object of
//! that shape is accepted as the whole file. When `specials` is absent, ids of
//! `<...>`-shaped tokens (other than byte-fallback tokens) are treated as
//! special.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};

use super::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Token list that keeps duplicates so they can be reported.
struct TokenEntries(Vec<(String, TokenId)>);

impl<'de> Deserialize<'de> for TokenEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = TokenEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of token strings or an object of token -> id")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(tok) = seq.next_element::<String>()? {
                    let id = out.len() as TokenId;
                    out.push((tok, id));
                }
                Ok(TokenEntries(out))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((tok, id)) = map.next_entry::<String, TokenId>()? {
                    out.push((tok, id));
                }
                Ok(TokenEntries(out))
            }
        }

        deserializer.deserialize_any(EntriesVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: TokenEntries,
    specials: Option<Vec<TokenId>>,
    #[serde(default)]
    special_roles: BTreeMap<String, TokenId>,
}

#[derive(Serialize)]
struct VocabFileOut<'a> {
    tokens: &'a [String],
    specials: Vec<TokenId>,
    special_roles: &'a BTreeMap<String, TokenId>,
}

fn looks_special(token: &str) -> bool {
    token.len() > 2
        && token.starts_with('<')
        && token.ends_with('>')
        && !token.starts_with("<0x")
        && !token.chars().any(char::is_whitespace)
}

impl Vocabulary {
    /// Parses the vocabulary file format from a string.
    pub fn from_json(text: &str) -> std::result::Result<Self, VocabParseError> {
        if text.trim().is_empty() {
            return Ok(Vocabulary::empty());
        }
        let (entries, specials, roles) = match serde_json::from_str::<VocabFile>(text) {
            Ok(f) => (f.tokens.0, f.specials, f.special_roles),
            Err(structured) => match serde_json::from_str::<TokenEntries>(text) {
                Ok(entries) => (entries.0, None, BTreeMap::new()),
                Err(_) => return Err(VocabParseError::Json(structured)),
            },
        };
        let specials =
            specials.unwrap_or_else(|| entries.iter().filter(|(t, _)| looks_special(t)).map(|(_, id)| *id).collect());
        Vocabulary::from_pairs(entries, specials, roles).map_err(VocabParseError::Invalid)
    }

    pub fn to_json(&self) -> String {
        let out = VocabFileOut {
            tokens: &self.tokens,
            specials: self.specials.iter().copied().collect(),
            special_roles: &self.special_roles,
        };
        serde_json::to_string(&out).expect("vocabulary serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_json(&text).map_err(|e| match e {
            VocabParseError::Json(e) => Error::format(path, e),
            VocabParseError::Invalid(e) => Error::format(path, e),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VocabParseError {
    #[error(transparent)]
    Json(serde_json::Error),
    #[error(transparent)]
    Invalid(Error),
}
