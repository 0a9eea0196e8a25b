//! Vocabularies, canonical token forms, and simple deterministic tokenizers.

mod canon;
mod file;
mod tokenizer;

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub use canon::{canonicalize, canonicalize_bytes, CanonicalForm};
pub use tokenizer::{make_toy_tokenizer, Tokenizer, ToyKind};

use crate::{Error, Result};

/// Token id. Ids are dense: `0..len`.
pub type TokenId = u32;

/// An ordered, gap-free set of token strings.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    canonical: Vec<CanonicalForm>,
    id_of: HashMap<String, TokenId>,
    specials: BTreeSet<TokenId>,
    special_roles: BTreeMap<String, TokenId>,
    role_of: HashMap<TokenId, String>,
}

/// How a token participates in cross-vocabulary comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKey<'a> {
    /// Ordinary token, compared by canonical text.
    Text(&'a [u8]),
    /// Special token, compared only through its role (if any).
    Special(Option<&'a str>),
}

impl TokenKey<'_> {
    /// Cross-vocabulary equivalence: equal canonical text, or specials that
    /// share a role.
    pub fn equivalent(&self, other: &TokenKey<'_>) -> bool {
        match (self, other) {
            (TokenKey::Text(a), TokenKey::Text(b)) => a == b,
            (TokenKey::Special(Some(a)), TokenKey::Special(Some(b))) => a == b,
            _ => false,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary where `tokens[i]` has id `i`.
    ///
    /// Role ids are added to the special set.
    pub fn new(
        tokens: Vec<String>,
        specials: impl IntoIterator<Item = TokenId>,
        special_roles: BTreeMap<String, TokenId>,
    ) -> Result<Self> {
        let size = tokens.len();
        let mut id_of = HashMap::with_capacity(size);
        for (id, tok) in tokens.iter().enumerate() {
            if let Some(first) = id_of.insert(tok.clone(), id as TokenId) {
                return Err(Error::DuplicateToken { token: tok.clone(), first, second: id as TokenId });
            }
        }

        let mut special_set = BTreeSet::new();
        for id in specials.into_iter().chain(special_roles.values().copied()) {
            if id as usize >= size {
                return Err(Error::InvalidSpecial { id, size });
            }
            special_set.insert(id);
        }
        let role_of = special_roles.iter().map(|(r, &id)| (id, r.clone())).collect();

        let canonical = tokens
            .iter()
            .enumerate()
            .map(|(id, tok)| {
                if special_set.contains(&(id as TokenId)) {
                    Ok(CanonicalForm::verbatim(tok.as_bytes().to_vec()))
                } else {
                    canonicalize(tok)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Vocabulary { tokens, canonical, id_of, specials: special_set, special_roles, role_of })
    }

    /// Builds a vocabulary from explicit `(token, id)` pairs, validating that
    /// ids are unique and cover `0..pairs.len()`.
    pub fn from_pairs(
        pairs: Vec<(String, TokenId)>,
        specials: impl IntoIterator<Item = TokenId>,
        special_roles: BTreeMap<String, TokenId>,
    ) -> Result<Self> {
        let mut seen_tokens: HashMap<&str, TokenId> = HashMap::new();
        let mut by_id: BTreeMap<TokenId, &str> = BTreeMap::new();
        for (tok, id) in &pairs {
            if let Some(&first) = seen_tokens.get(tok.as_str()) {
                return Err(Error::DuplicateToken { token: tok.clone(), first, second: *id });
            }
            seen_tokens.insert(tok, *id);
            if let Some(first) = by_id.insert(*id, tok) {
                return Err(Error::DuplicateId { id: *id, first: first.to_string(), second: tok.clone() });
            }
        }
        for (expected, &id) in by_id.keys().enumerate() {
            if id != expected as TokenId {
                return Err(Error::IdGap { missing: expected as TokenId });
            }
        }
        let tokens = by_id.into_values().map(str::to_string).collect();
        Vocabulary::new(tokens, specials, special_roles)
    }

    pub fn empty() -> Self {
        Vocabulary::new(Vec::new(), [], BTreeMap::new()).expect("empty vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn check_id(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidId { id, size: self.len() })
        }
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(&id)
    }

    pub fn specials(&self) -> &BTreeSet<TokenId> {
        &self.specials
    }

    pub fn special_roles(&self) -> &BTreeMap<String, TokenId> {
        &self.special_roles
    }

    pub fn role_of(&self, id: TokenId) -> Option<&str> {
        self.role_of.get(&id).map(String::as_str)
    }

    /// Id of the beginning-of-sequence token: the `bos` role if mapped,
    /// otherwise a token literally named `<bos>`.
    pub fn bos_id(&self) -> Option<TokenId> {
        self.special_roles.get("bos").copied().or_else(|| self.id_of("<bos>"))
    }

    /// Canonical form of a token. Specials are returned verbatim.
    pub fn canonical(&self, id: TokenId) -> &CanonicalForm {
        &self.canonical[id as usize]
    }

    pub fn key(&self, id: TokenId) -> TokenKey<'_> {
        if self.is_special(id) {
            TokenKey::Special(self.role_of(id))
        } else {
            TokenKey::Text(self.canonical[id as usize].as_bytes())
        }
    }

    /// Index from canonical text to the smallest non-special id carrying it.
    pub fn canonical_index(&self) -> HashMap<&[u8], TokenId> {
        let mut index = HashMap::with_capacity(self.len());
        for id in 0..self.len() as TokenId {
            if !self.is_special(id) {
                index.entry(self.canonical(id).as_bytes()).or_insert(id);
            }
        }
        index
    }

    /// SHA-256 of the serialized vocabulary; identifies it in dump sidecars.
    pub fn content_hash(&self) -> String {
        crate::math::sha256_hex(self.to_json().as_bytes())
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.specials == other.specials && self.special_roles == other.special_roles
    }
}

impl Eq for Vocabulary {}
