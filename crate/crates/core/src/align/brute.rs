use super::{AlignScoring, Alignment, AlignmentChunk, ChunkKind};
use crate::vocab::{TokenId, TokenKey, Tokenizer, Vocabulary};
use crate::{Error, Result};

const MAX_TOTAL_LEN: usize = 12;

/// Exhaustive alignment: enumerates every legal sequence of transitions from
/// `(0, 0)` to `(n, m)` and returns one with maximal score.
///
/// Refuses inputs with `n + m > 12`. Intended as a test oracle for
/// [`super::dp_align`]; it shares no code with the DP beyond token
/// equivalence.
pub fn brute_force_align(
    student: &[TokenId],
    teacher: &[TokenId],
    scoring: &AlignScoring,
    tok_s: &Tokenizer,
    tok_t: &Tokenizer,
) -> Result<Alignment> {
    brute_force_align_vocab(student, teacher, scoring, tok_s.vocab(), tok_t.vocab())
}

pub fn brute_force_align_vocab(
    student: &[TokenId],
    teacher: &[TokenId],
    scoring: &AlignScoring,
    vs: &Vocabulary,
    vt: &Vocabulary,
) -> Result<Alignment> {
    if student.len() + teacher.len() > MAX_TOTAL_LEN {
        return Err(Error::SizeBound(student.len() + teacher.len()));
    }
    scoring.validate()?;
    for &id in student {
        vs.check_id(id)?;
    }
    for &id in teacher {
        vt.check_id(id)?;
    }
    let search = Search {
        s: student.iter().map(|&id| vs.key(id)).collect(),
        t: teacher.iter().map(|&id| vt.key(id)).collect(),
        scoring,
    };
    let mut best: Option<(f64, Vec<AlignmentChunk>)> = None;
    let mut path = Vec::new();
    search.walk(0, 0, 0.0, &mut path, &mut best);
    let (score, chunks) = best.expect("at least the all-gap path exists");
    Ok(Alignment { chunks, score })
}

struct Search<'a> {
    s: Vec<TokenKey<'a>>,
    t: Vec<TokenKey<'a>>,
    scoring: &'a AlignScoring,
}

fn concat(keys: &[TokenKey<'_>]) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    for k in keys {
        match k {
            TokenKey::Text(b) => out.extend_from_slice(b),
            TokenKey::Special(_) => return None,
        }
    }
    Some(out)
}

impl Search<'_> {
    fn walk(
        &self,
        i: usize,
        j: usize,
        score: f64,
        path: &mut Vec<AlignmentChunk>,
        best: &mut Option<(f64, Vec<AlignmentChunk>)>,
    ) {
        let (n, m) = (self.s.len(), self.t.len());
        if i == n && j == m {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                *best = Some((score, path.clone()));
            }
            return;
        }
        let sc = self.scoring;
        let mut moves: Vec<(usize, usize, ChunkKind, f64)> = Vec::new();

        if i < n && j < m {
            if self.s[i].equivalent(&self.t[j]) {
                moves.push((1, 1, ChunkKind::Match, sc.alpha_exact));
            } else {
                moves.push((1, 1, ChunkKind::Mismatch, -sc.alpha_exact));
            }
        }
        for k in 2..=sc.max_span {
            if i < n && j + k <= m {
                let single = concat(&self.s[i..i + 1]);
                if single.is_some() && single == concat(&self.t[j..j + k]) {
                    moves.push((1, k, ChunkKind::Combination, sc.alpha_comb * k as f64));
                }
            }
            if j < m && i + k <= n {
                let single = concat(&self.t[j..j + 1]);
                if single.is_some() && single == concat(&self.s[i..i + k]) {
                    moves.push((k, 1, ChunkKind::Combination, sc.alpha_comb * k as f64));
                }
            }
        }
        if i < n {
            moves.push((1, 0, ChunkKind::GapStudentSide, sc.alpha_gap));
        }
        if j < m {
            moves.push((0, 1, ChunkKind::GapTeacherSide, sc.alpha_gap));
        }

        for (di, dj, kind, gain) in moves {
            path.push(AlignmentChunk { student: i..i + di, teacher: j..j + dj, kind });
            self.walk(i + di, j + dj, score + gain, path, best);
            path.pop();
        }
    }
}
