use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::{AlignScoring, Alignment};
use crate::vocab::TokenId;
use crate::Result;

/// Cache key: both vocabulary hashes, both sequences, and the scoring
/// constants (by bit pattern).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    vocab_pair: (String, String),
    student: Vec<TokenId>,
    teacher: Vec<TokenId>,
    scoring: [u64; 4],
}

impl CacheKey {
    pub fn new(
        student_vocab_hash: &str,
        teacher_vocab_hash: &str,
        student: &[TokenId],
        teacher: &[TokenId],
        scoring: &AlignScoring,
    ) -> Self {
        CacheKey {
            vocab_pair: (student_vocab_hash.to_string(), teacher_vocab_hash.to_string()),
            student: student.to_vec(),
            teacher: teacher.to_vec(),
            scoring: [
                scoring.alpha_exact.to_bits(),
                scoring.alpha_comb.to_bits(),
                scoring.alpha_gap.to_bits(),
                scoring.max_span as u64,
            ],
        }
    }
}

/// Explicit alignment store. Concurrent readers, exclusive inserts.
#[derive(Debug, Default)]
pub struct AlignmentCache {
    entries: RwLock<HashMap<CacheKey, Arc<Alignment>>>,
}

impl AlignmentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<Alignment>> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    /// Returns the cached alignment, computing and inserting it on a miss.
    pub fn get_or_try_insert(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<Alignment>,
    ) -> Result<Arc<Alignment>> {
        if let Some(hit) = self.get(&key) {
            return Ok(hit);
        }
        let computed = Arc::new(compute()?);
        let mut entries = self.entries.write().expect("cache lock poisoned");
        Ok(entries.entry(key).or_insert(computed).clone())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
