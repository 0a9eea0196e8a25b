use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::projection::{Provenance, SparseProjection};
use crate::vocab::{TokenId, TokenKey, Vocabulary};
use crate::{Error, Result};

/// Student/teacher token pairs treated as the same token. Everything outside
/// the pairs is "uncommon" on its side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonSet {
    pairs: Vec<(TokenId, TokenId)>,
    bijective: bool,
}

impl CommonSet {
    /// Validates that no student id repeats, and no teacher id either when
    /// `bijective` is set. Pairs are stored sorted by student id.
    pub fn new(mut pairs: Vec<(TokenId, TokenId)>, bijective: bool) -> Result<Self> {
        pairs.sort_unstable();
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidConfig(format!("student id {} appears twice in the common set", w[0].0)));
        }
        if bijective {
            let mut teachers: Vec<TokenId> = pairs.iter().map(|p| p.1).collect();
            teachers.sort_unstable();
            if let Some(w) = teachers.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "teacher id {} appears twice in a bijective common set",
                    w[0]
                )));
            }
        }
        Ok(CommonSet { pairs, bijective })
    }

    pub fn empty() -> Self {
        CommonSet { pairs: Vec::new(), bijective: true }
    }

    pub fn pairs(&self) -> &[(TokenId, TokenId)] {
        &self.pairs
    }

    pub fn is_bijective(&self) -> bool {
        self.bijective
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains_student(&self, s: TokenId) -> bool {
        self.pairs.binary_search_by_key(&s, |p| p.0).is_ok()
    }

    /// Membership masks over both vocabularies.
    pub fn masks(&self, n_student: usize, n_teacher: usize) -> Result<(Vec<bool>, Vec<bool>)> {
        let mut ms = vec![false; n_student];
        let mut mt = vec![false; n_teacher];
        for &(s, t) in &self.pairs {
            if s as usize >= n_student || t as usize >= n_teacher {
                return Err(Error::ShapeMismatch(format!(
                    "pair ({s}, {t}) outside vocabularies of sizes {n_student} and {n_teacher}"
                )));
            }
            ms[s as usize] = true;
            mt[t as usize] = true;
        }
        Ok((ms, mt))
    }
}

/// Pairs of tokens with equal canonical text (specials: equal role).
///
/// Students are visited in id order and each takes the smallest equivalent
/// teacher id; a teacher id already taken leaves the later student uncommon.
pub fn build_common_set_exact(vs: &Vocabulary, vt: &Vocabulary) -> CommonSet {
    let index = vt.canonical_index();
    let mut taken = vec![false; vt.len()];
    let mut pairs = Vec::new();
    for s in 0..vs.len() as TokenId {
        let partner = match vs.key(s) {
            TokenKey::Text(text) => index.get(text).copied(),
            TokenKey::Special(Some(role)) => vt.special_roles().get(role).copied(),
            TokenKey::Special(None) => None,
        };
        if let Some(t) = partner {
            if !taken[t as usize] {
                taken[t as usize] = true;
                pairs.push((s, t));
            }
        }
    }
    CommonSet { pairs, bijective: true }
}

/// Common set widened with every student token's top-ranked teacher token
/// under `w`.
///
/// When several students pick the same teacher token, an exact-provenance
/// row beats a multi-token one, then the larger weight wins, then the
/// smaller student id. Losers stay uncommon, so the result is bijective.
pub fn build_common_set_relaxed(w: &SparseProjection) -> CommonSet {
    let mut best: BTreeMap<TokenId, (TokenId, bool, f64)> = BTreeMap::new();
    for s in 0..w.student_size() as TokenId {
        let Some((t, weight)) = w.top1(s) else { continue };
        let exact = w.provenance(s) == Provenance::Exact;
        let replace = match best.get(&t) {
            None => true,
            Some(&(_, cur_exact, cur_weight)) => (exact, weight) > (cur_exact, cur_weight),
        };
        if replace {
            best.insert(t, (s, exact, weight));
        }
    }
    let mut pairs: Vec<(TokenId, TokenId)> = best.into_iter().map(|(t, (s, _, _))| (s, t)).collect();
    pairs.sort_unstable();
    CommonSet { pairs, bijective: true }
}
