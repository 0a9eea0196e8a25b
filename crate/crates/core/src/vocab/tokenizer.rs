use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{canonicalize, TokenId, Vocabulary};
use crate::{Error, Result};

/// Greedy longest-match tokenizer over a vocabulary's canonical forms.
///
/// Special tokens are never produced by [`Tokenizer::encode`]; they decode to
/// their literal text.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: Vocabulary,
    index: HashMap<Vec<u8>, TokenId>,
    max_len: usize,
}

/// Toy tokenizer families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Every digit is its own token.
    DigitSplitting,
    /// Digit runs of length up to 3 are single tokens.
    NumeralPreserving,
    /// One token per character.
    CharLevel,
    /// Whole corpus words (with and without a leading space).
    WordLevel,
}

impl Tokenizer {
    pub fn greedy(vocab: Vocabulary) -> Self {
        let mut index = HashMap::new();
        for (bytes, id) in vocab.canonical_index() {
            if !bytes.is_empty() {
                index.insert(bytes.to_vec(), id);
            }
        }
        let max_len = index.keys().map(Vec::len).max().unwrap_or(0);
        Tokenizer { vocab, index, max_len }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let longest = self.max_len.min(bytes.len() - pos);
            let hit = (1..=longest).rev().find_map(|len| self.index.get(&bytes[pos..pos + len]).map(|&id| (id, len)));
            match hit {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => return Err(Error::Unencodable { byte: bytes[pos], offset: pos }),
            }
        }
        Ok(ids)
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.vocab.canonical(id).as_bytes());
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }
}

/// Builds one of the toy tokenizers.
///
/// Every kind contains the 128 ASCII characters, byte-fallback tokens for
/// bytes `0x80..=0xFF`, and the specials `<bos>` / `<eos>` (without roles).
/// `corpus` contributes whole words to every kind except `CharLevel`; only
/// `WordLevel` keeps words that contain digits.
pub fn make_toy_tokenizer(kind: ToyKind, corpus: &[&str]) -> Tokenizer {
    let mut tokens: Vec<String> = (0u8..128).map(|b| (b as char).to_string()).collect();
    tokens.extend((0x80..=0xFFu16).map(|b| format!("<0x{b:02X}>")));

    let mut extra: BTreeSet<String> = BTreeSet::new();
    if kind == ToyKind::NumeralPreserving {
        extra.extend((0..100).map(|n| format!("{n:02}")));
        extra.extend((0..1000).map(|n| format!("{n:03}")));
    }
    if kind != ToyKind::CharLevel {
        for word in corpus.iter().flat_map(|line| line.split_whitespace()) {
            if kind != ToyKind::WordLevel && word.bytes().any(|b| b.is_ascii_digit()) {
                continue;
            }
            for candidate in [word.to_string(), format!(" {word}")] {
                extra.insert(candidate);
            }
        }
    }
    let present: BTreeSet<&String> = tokens.iter().collect();
    let extra: Vec<String> = extra
        .into_iter()
        .filter(|t| !present.contains(t))
        // Only tokens that are their own canonical form keep encode/decode exact.
        .filter(|t| canonicalize(t).map(|c| c.as_bytes() == t.as_bytes()).unwrap_or(false))
        .collect();
    tokens.extend(extra);

    let bos = tokens.len() as TokenId;
    tokens.push("<bos>".into());
    tokens.push("<eos>".into());
    let vocab = Vocabulary::new(tokens, [bos, bos + 1], BTreeMap::new()).expect("toy vocabulary is valid");
    Tokenizer::greedy(vocab)
}
