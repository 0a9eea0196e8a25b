//! Span alignment between a student and a teacher token sequence.
//!
//! [`dp_align`] is a soft-scored dynamic program over five transition kinds:
//! a 1-to-1 diagonal step (match or mismatch), 1-to-k and k-to-1
//! combinations whose concatenated canonical texts agree, and one-sided gaps.
//! [`brute_force_align`] enumerates the same transition language exhaustively
//! and exists to check the DP. [`trl_substring_align`] is the
//! incremental-decode buffer baseline.

mod brute;
mod cache;
mod trl;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_align, brute_force_align_vocab};
pub use cache::{AlignmentCache, CacheKey};
pub use trl::trl_substring_align;

use crate::vocab::{TokenId, TokenKey, Tokenizer, Vocabulary};
use crate::{Error, Result};

/// Scoring constants of the alignment recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignScoring {
    pub alpha_exact: f64,
    pub alpha_comb: f64,
    pub alpha_gap: f64,
    pub max_span: usize,
}

impl Default for AlignScoring {
    fn default() -> Self {
        AlignScoring { alpha_exact: 3.0, alpha_comb: 1.5, alpha_gap: -1.5, max_span: 4 }
    }
}

impl AlignScoring {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_exact > 0.0
            && self.alpha_comb > 0.0
            && self.alpha_gap < 0.0
            && self.max_span >= 2
            && [self.alpha_exact, self.alpha_comb, self.alpha_gap].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "alignment scoring needs alpha_exact > 0, alpha_comb > 0, alpha_gap < 0, \
                 max_span >= 2; got {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    /// 1-to-1, canonical texts agree.
    Match,
    /// 1-to-1 diagonal step whose texts disagree. Excluded from the loss.
    Mismatch,
    /// 1-to-k or k-to-1 with agreeing concatenated texts.
    Combination,
    /// A student token with no teacher partner. Excluded from the loss.
    GapStudentSide,
    /// A teacher token with no student partner. Excluded from the loss.
    GapTeacherSide,
    /// Many-to-many group flushed by the buffer baseline on equal text.
    Group,
    /// End-of-sequence residue of the buffer baseline whose texts disagree.
    SuperGroup,
}

impl ChunkKind {
    pub fn in_loss(self) -> bool {
        matches!(self, ChunkKind::Match | ChunkKind::Combination | ChunkKind::Group)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentChunk {
    pub student: Range<usize>,
    pub teacher: Range<usize>,
    pub kind: ChunkKind,
}

impl AlignmentChunk {
    pub fn in_loss(&self) -> bool {
        self.kind.in_loss()
    }

    /// This chunk's share of the DP score.
    pub fn score(&self, scoring: &AlignScoring) -> f64 {
        match self.kind {
            ChunkKind::Match => scoring.alpha_exact,
            ChunkKind::Mismatch => -scoring.alpha_exact,
            ChunkKind::Combination => scoring.alpha_comb * self.student.len().max(self.teacher.len()) as f64,
            ChunkKind::GapStudentSide | ChunkKind::GapTeacherSide => scoring.alpha_gap,
            ChunkKind::Group | ChunkKind::SuperGroup => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub chunks: Vec<AlignmentChunk>,
    /// Total DP score. The buffer baseline does not score and reports 0.
    pub score: f64,
}

impl Alignment {
    pub fn count(&self, kind: ChunkKind) -> usize {
        self.chunks.iter().filter(|c| c.kind == kind).count()
    }

    pub fn loss_chunks(&self) -> impl Iterator<Item = (usize, &AlignmentChunk)> {
        self.chunks.iter().enumerate().filter(|(_, c)| c.in_loss())
    }

    /// Checks that student spans tile `0..n` and teacher spans tile `0..m`
    /// in order, with every chunk covering at least one token.
    pub fn check_partition(&self, n: usize, m: usize) -> Result<()> {
        let (mut s, mut t) = (0, 0);
        for (k, c) in self.chunks.iter().enumerate() {
            if c.student.start != s || c.teacher.start != t {
                return Err(Error::ShapeMismatch(format!(
                    "chunk {k} does not start where chunk {} ended",
                    k.wrapping_sub(1)
                )));
            }
            if c.student.is_empty() && c.teacher.is_empty() {
                return Err(Error::ShapeMismatch(format!("chunk {k} is empty")));
            }
            s = c.student.end;
            t = c.teacher.end;
        }
        if s != n || t != m {
            return Err(Error::ShapeMismatch(format!("chunks cover {s}/{n} student, {t}/{m} teacher tokens")));
        }
        Ok(())
    }

    /// JSON Lines records for this alignment.
    pub fn records(&self, seq_id: &str) -> Vec<ChunkRecord> {
        self.chunks
            .iter()
            .enumerate()
            .map(|(k, c)| ChunkRecord {
                seq_id: seq_id.to_string(),
                k,
                s_lo: c.student.start,
                s_hi: c.student.end,
                t_lo: c.teacher.start,
                t_hi: c.teacher.end,
                kind: c.kind,
                in_loss: c.in_loss(),
            })
            .collect()
    }
}

/// One line of the alignment dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub seq_id: String,
    pub k: usize,
    pub s_lo: usize,
    pub s_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
    pub kind: ChunkKind,
    pub in_loss: bool,
}

/// Canonical keys of both sequences, validated against their vocabularies.
pub(crate) struct KeyedPair<'a> {
    pub student: Vec<TokenKey<'a>>,
    pub teacher: Vec<TokenKey<'a>>,
}

impl<'a> KeyedPair<'a> {
    pub fn new(student: &[TokenId], teacher: &[TokenId], vs: &'a Vocabulary, vt: &'a Vocabulary) -> Result<Self> {
        let keys = |ids: &[TokenId], v: &'a Vocabulary| -> Result<Vec<TokenKey<'a>>> {
            ids.iter().map(|&id| v.check_id(id).map(|_| v.key(id))).collect()
        };
        Ok(KeyedPair { student: keys(student, vs)?, teacher: keys(teacher, vt)? })
    }
}

/// True when `single` is a text token equal to the concatenation of `parts`,
/// all of which are text tokens.
pub(crate) fn combines(single: &TokenKey<'_>, parts: &[TokenKey<'_>]) -> bool {
    let TokenKey::Text(mut rest) = *single else { return false };
    for part in parts {
        let TokenKey::Text(p) = *part else { return false };
        match rest.strip_prefix(p) {
            Some(r) => rest = r,
            None => return false,
        }
    }
    rest.is_empty()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Diagonal,
    /// One student token, `k` teacher tokens.
    OneToMany(usize),
    /// `k` student tokens, one teacher token.
    ManyToOne(usize),
    /// Student token alone ("gap in teacher").
    StudentOnly,
    /// Teacher token alone ("gap in student").
    TeacherOnly,
}

/// Candidate transitions into cell `(i, j)`, in backtrace preference order.
fn steps_into<'p>(
    pair: &'p KeyedPair<'p>,
    scoring: &AlignScoring,
    i: usize,
    j: usize,
) -> impl Iterator<Item = (usize, usize, Step, f64)> + 'p {
    let s = &pair.student;
    let t = &pair.teacher;
    let max_span = scoring.max_span;
    let sc = *scoring;

    let diagonal = (i >= 1 && j >= 1).then(|| {
        let score = if s[i - 1].equivalent(&t[j - 1]) { sc.alpha_exact } else { -sc.alpha_exact };
        (i - 1, j - 1, Step::Diagonal, score)
    });
    let one_to_many = (2..=max_span)
        .filter(move |&k| i >= 1 && j >= k && combines(&s[i - 1], &t[j - k..j]))
        .map(move |k| (i - 1, j - k, Step::OneToMany(k), sc.alpha_comb * k as f64));
    let many_to_one = (2..=max_span)
        .filter(move |&k| j >= 1 && i >= k && combines(&t[j - 1], &s[i - k..i]))
        .map(move |k| (i - k, j - 1, Step::ManyToOne(k), sc.alpha_comb * k as f64));
    let student_only = (i >= 1).then(|| (i - 1, j, Step::StudentOnly, sc.alpha_gap));
    let teacher_only = (j >= 1).then(|| (i, j - 1, Step::TeacherOnly, sc.alpha_gap));

    diagonal.into_iter().chain(one_to_many).chain(many_to_one).chain(student_only).chain(teacher_only)
}

fn chunk_for(step: Step, from: (usize, usize), to: (usize, usize), matched: bool) -> AlignmentChunk {
    let kind = match step {
        Step::Diagonal if matched => ChunkKind::Match,
        Step::Diagonal => ChunkKind::Mismatch,
        Step::OneToMany(_) | Step::ManyToOne(_) => ChunkKind::Combination,
        Step::StudentOnly => ChunkKind::GapStudentSide,
        Step::TeacherOnly => ChunkKind::GapTeacherSide,
    };
    AlignmentChunk { student: from.0..to.0, teacher: from.1..to.1, kind }
}

/// Aligns two token sequences by the soft-scored span recurrence.
///
/// Ties in the backtrace prefer a diagonal step, then 1-to-k combinations
/// (smaller k first), then k-to-1 combinations, then a student-only gap, then
/// a teacher-only gap.
pub fn dp_align(
    student: &[TokenId],
    teacher: &[TokenId],
    scoring: &AlignScoring,
    tok_s: &Tokenizer,
    tok_t: &Tokenizer,
) -> Result<Alignment> {
    dp_align_vocab(student, teacher, scoring, tok_s.vocab(), tok_t.vocab())
}

/// [`dp_align`] given vocabularies directly.
pub fn dp_align_vocab(
    student: &[TokenId],
    teacher: &[TokenId],
    scoring: &AlignScoring,
    vs: &Vocabulary,
    vt: &Vocabulary,
) -> Result<Alignment> {
    scoring.validate()?;
    let pair = KeyedPair::new(student, teacher, vs, vt)?;
    let (n, m) = (student.len(), teacher.len());
    let width = m + 1;
    let mut table = vec![f64::NEG_INFINITY; (n + 1) * width];
    table[0] = 0.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let best = steps_into(&pair, scoring, i, j)
                .map(|(pi, pj, _, score)| table[pi * width + pj] + score)
                .fold(f64::NEG_INFINITY, f64::max);
            table[i * width + j] = best;
        }
    }

    let mut chunks = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * width + j];
        let (pi, pj, step, score) = steps_into(&pair, scoring, i, j)
            .find(|&(pi, pj, _, score)| table[pi * width + pj] + score == here)
            .expect("every reachable cell has a predecessor achieving its score");
        chunks.push(chunk_for(step, (pi, pj), (i, j), score > 0.0));
        i = pi;
        j = pj;
    }
    chunks.reverse();
    Ok(Alignment { chunks, score: table[n * width + m] })
}
