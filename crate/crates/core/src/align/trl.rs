use super::{Alignment, AlignmentChunk, ChunkKind};
use crate::vocab::{TokenId, Tokenizer};
use crate::Result;

/// Incremental-decode buffer alignment.
///
/// Each side keeps a buffer of decoded text. The shorter buffer (the student
/// one on a tie) is extended one token at a time, and a group is flushed when
/// the two buffers are equal as strings. Whatever is left at the end of the
/// sequences is force-flushed as one group, which is a
/// [`ChunkKind::SuperGroup`] when its texts disagree.
pub fn trl_substring_align(
    student: &[TokenId],
    teacher: &[TokenId],
    tok_s: &Tokenizer,
    tok_t: &Tokenizer,
) -> Result<Alignment> {
    for &id in student {
        tok_s.vocab().check_id(id)?;
    }
    for &id in teacher {
        tok_t.vocab().check_id(id)?;
    }
    let piece_s = |id: TokenId| tok_s.decode_bytes(&[id]);
    let piece_t = |id: TokenId| tok_t.decode_bytes(&[id]);

    let (n, m) = (student.len(), teacher.len());
    let mut chunks = Vec::new();
    let (mut s_start, mut t_start) = (0, 0);
    let (mut i, mut j) = (0, 0);
    let mut s_buf: Vec<u8> = Vec::new();
    let mut t_buf: Vec<u8> = Vec::new();

    while i < n || j < m {
        let both_empty = i == s_start && j == t_start;
        if both_empty && i < n && j < m {
            s_buf.extend(piece_s(student[i]));
            t_buf.extend(piece_t(teacher[j]));
            i += 1;
            j += 1;
        } else {
            let extend_student = if i >= n {
                false
            } else if j >= m {
                true
            } else {
                s_buf.len() <= t_buf.len()
            };
            if extend_student {
                s_buf.extend(piece_s(student[i]));
                i += 1;
            } else {
                t_buf.extend(piece_t(teacher[j]));
                j += 1;
            }
        }

        if i > s_start && j > t_start && s_buf == t_buf {
            chunks.push(group(s_start..i, t_start..j, true));
            s_start = i;
            t_start = j;
            s_buf.clear();
            t_buf.clear();
        }
    }

    if s_start < n || t_start < m {
        chunks.push(group(s_start..n, t_start..m, s_buf == t_buf));
    }
    Ok(Alignment { chunks, score: 0.0 })
}

fn group(student: std::ops::Range<usize>, teacher: std::ops::Range<usize>, text_equal: bool) -> AlignmentChunk {
    let kind = match (student.len(), teacher.len()) {
        (_, 0) => ChunkKind::GapStudentSide,
        (0, _) => ChunkKind::GapTeacherSide,
        _ if !text_equal => ChunkKind::SuperGroup,
        (1, 1) => ChunkKind::Match,
        (1, _) | (_, 1) => ChunkKind::Combination,
        _ => ChunkKind::Group,
    };
    AlignmentChunk { student, teacher, kind }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{dp_align, AlignScoring};
    use crate::vocab::Vocabulary;

    fn tok(tokens: &[&str]) -> Tokenizer {
        Tokenizer::greedy(Vocabulary::from_json(&serde_json::to_string(tokens).unwrap()).unwrap())
    }

    #[test]
    fn bos_asymmetry_yields_one_super_group() {
        let ts = tok(&["<bos>", "Hello", "Ġworld", "."]);
        let tt = tok(&["Hello", " world", "."]);
        let a = trl_substring_align(&[0, 1, 2, 3], &[0, 1, 2], &ts, &tt).unwrap();
        assert_eq!(a.chunks.len(), 1);
        assert_eq!(a.chunks[0].kind, ChunkKind::SuperGroup);
        assert_eq!((a.chunks[0].student.clone(), a.chunks[0].teacher.clone()), (0..4, 0..3));
        assert!(!a.chunks[0].in_loss());
    }

    #[test]
    fn identical_sequences_match_dp() {
        let t = tok(&["a", "b", "c"]);
        let seq = [0, 2, 1, 1];
        let trl = trl_substring_align(&seq, &seq, &t, &t).unwrap();
        let dp = dp_align(&seq, &seq, &AlignScoring::default(), &t, &t).unwrap();
        assert_eq!(trl.chunks, dp.chunks);
    }

    #[test]
    fn one_to_many_flush() {
        let ts = tok(&["ab"]);
        let tt = tok(&["a", "b"]);
        let a = trl_substring_align(&[0], &[0, 1], &ts, &tt).unwrap();
        assert_eq!(a.chunks.len(), 1);
        assert_eq!(a.chunks[0].kind, ChunkKind::Combination);
        assert_eq!((a.chunks[0].student.clone(), a.chunks[0].teacher.clone()), (0..1, 0..2));
    }

    #[test]
    fn many_to_many_group() {
        let ts = tok(&["ab", "c"]);
        let tt = tok(&["a", "bc"]);
        let a = trl_substring_align(&[0, 1], &[0, 1], &ts, &tt).unwrap();
        assert_eq!(a.chunks.len(), 1);
        assert_eq!(a.chunks[0].kind, ChunkKind::Group);
        a.check_partition(2, 2).unwrap();
    }

    #[test]
    fn one_sided_residue_is_a_gap() {
        let t = tok(&["a", "b"]);
        let a = trl_substring_align(&[0, 1], &[0], &t, &t).unwrap();
        assert_eq!(a.chunks.iter().map(|c| c.kind).collect::<Vec<_>>(), [ChunkKind::Match, ChunkKind::GapStudentSide]);
    }
}
