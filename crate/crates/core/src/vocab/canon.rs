//! Token canonicalization.
//!
//! Decoded token strings from different tokenizer families spell the same
//! text differently (`Ġthe`, `▁the`, ` the`). [`canonicalize`] maps them to
//! one byte string so that cross-family comparisons are plain equality.

use std::fmt;

use crate::{Error, Result};

/// Normalized token text. A byte string rather than `String`: byte-fallback
/// tokens canonicalize to a single raw byte that need not be valid UTF-8.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CanonicalForm(Vec<u8>);

impl CanonicalForm {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Lossy UTF-8 view, for display.
    pub fn to_string_lossy(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }

    /// Wraps bytes that are passed through untouched (special tokens).
    pub(crate) fn verbatim(bytes: Vec<u8>) -> Self {
        CanonicalForm(bytes)
    }
}

impl fmt::Debug for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalForm({:?})", self.to_string_lossy())
    }
}

// U+0120 (GPT-2 byte-level space), U+2581 (SentencePiece), U+2423 (visible space).
const SPACE_MARKERS: [&[u8]; 3] = [b"\xC4\xA0", b"\xE2\x96\x81", b"\xE2\x90\xA3"];
// U+010A (GPT-2 byte-level newline).
const NEWLINE_MARKER: &[u8] = b"\xC4\x8A";
const ESCAPED_NEWLINE: &[u8] = b"\\n";

/// Canonicalizes a decoded token string.
///
/// Rules, in order: space-marker unification, newline unification,
/// byte-fallback substitution (`<0xHH>` becomes the byte `HH`), and
/// `" " + one ASCII punctuation character` collapsing to the punctuation.
/// Special tokens are not recognized here; [`super::Vocabulary`] passes them
/// through before calling this.
pub fn canonicalize(raw: &str) -> Result<CanonicalForm> {
    canonicalize_bytes(raw.as_bytes())
}

/// [`canonicalize`] over an arbitrary byte string, so canonical forms can be
/// re-canonicalized.
pub fn canonicalize_bytes(raw: &[u8]) -> Result<CanonicalForm> {
    let mut text = raw.to_vec();
    for marker in SPACE_MARKERS {
        text = replace_all(&text, marker, b" ");
    }
    text = replace_all(&text, NEWLINE_MARKER, b"\n");
    text = replace_all(&text, ESCAPED_NEWLINE, b"\n");

    if let Some(byte) = byte_fallback(&text)? {
        return Ok(CanonicalForm(vec![byte]));
    }

    if text.len() == 2 && text[0] == b' ' && text[1].is_ascii_punctuation() {
        text.remove(0);
    }
    Ok(CanonicalForm(text))
}

/// Parses `<0xHH>`; `Ok(None)` when `text` is not byte-fallback shaped.
fn byte_fallback(text: &[u8]) -> Result<Option<u8>> {
    let Some(payload) = text.strip_prefix(b"<0x").and_then(|t| t.strip_suffix(b">")) else {
        return Ok(None);
    };
    let malformed = || Error::MalformedByteToken(String::from_utf8_lossy(text).into_owned());
    if payload.len() != 2 {
        return Err(malformed());
    }
    let hex = std::str::from_utf8(payload).map_err(|_| malformed())?;
    u8::from_str_radix(hex, 16).map(Some).map_err(|_| malformed())
}

fn replace_all(haystack: &[u8], needle: &[u8], with: &[u8]) -> Vec<u8> {
    if haystack.len() < needle.len() {
        return haystack.to_vec();
    }
    let mut out = Vec::with_capacity(haystack.len());
    let mut i = 0;
    while i < haystack.len() {
        if haystack[i..].starts_with(needle) {
            out.extend_from_slice(with);
            i += needle.len();
        } else {
            out.push(haystack[i]);
            i += 1;
        }
    }
    out
}
