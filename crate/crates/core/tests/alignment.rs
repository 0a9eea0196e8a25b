use ctkd::align::{brute_force_align_vocab, dp_align_vocab, AlignScoring, ChunkKind};
use ctkd::vocab::{TokenId, Vocabulary};
use proptest::prelude::*;

fn six() -> Vocabulary {
    Vocabulary::from_json(r#"["a","b","c","ab","bc","abc"]"#).unwrap()
}

/// Six text tokens plus a `<bos>` special at id 6.
fn six_with_bos() -> Vocabulary {
    Vocabulary::from_json(r#"["a","b","c","ab","bc","abc","<bos>"]"#).unwrap()
}

fn pair(max_total: usize) -> impl Strategy<Value = (Vec<TokenId>, Vec<TokenId>)> {
    (0..=max_total)
        .prop_flat_map(move |n| (prop::collection::vec(0u32..6, n), prop::collection::vec(0u32..6, 0..=max_total - n)))
}

fn scoring() -> impl Strategy<Value = AlignScoring> {
    (0.5f64..5.0, 0.1f64..3.0, -3.0f64..-0.1, 2usize..=4).prop_map(|(e, c, g, l)| AlignScoring {
        alpha_exact: e,
        alpha_comb: c,
        alpha_gap: g,
        max_span: l,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn dp_score_equals_exhaustive_search((s, t) in pair(10)) {
        let v = six();
        let cfg = AlignScoring::default();
        let dp = dp_align_vocab(&s, &t, &cfg, &v, &v).unwrap();
        let brute = brute_force_align_vocab(&s, &t, &cfg, &v, &v).unwrap();
        prop_assert_eq!(dp.score, brute.score);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn dp_is_optimal_under_other_scorings((s, t) in pair(9), cfg in scoring()) {
        let v = six();
        let dp = dp_align_vocab(&s, &t, &cfg, &v, &v).unwrap();
        let brute = brute_force_align_vocab(&s, &t, &cfg, &v, &v).unwrap();
        prop_assert!((dp.score - brute.score).abs() < 1e-9, "dp {} brute {}", dp.score, brute.score);
    }

    #[test]
    fn chunks_partition_both_sequences(
        s in prop::collection::vec(0u32..6, 0..20),
        t in prop::collection::vec(0u32..6, 0..20),
    ) {
        let v = six();
        let a = dp_align_vocab(&s, &t, &AlignScoring::default(), &v, &v).unwrap();
        prop_assert!(a.check_partition(s.len(), t.len()).is_ok());
    }

    #[test]
    fn score_is_sum_of_chunk_scores(
        s in prop::collection::vec(0u32..6, 0..20),
        t in prop::collection::vec(0u32..6, 0..20),
        cfg in scoring(),
    ) {
        let v = six();
        let a = dp_align_vocab(&s, &t, &cfg, &v, &v).unwrap();
        let mut sum = 0.0;
        for c in &a.chunks {
            sum += match c.kind {
                ChunkKind::Match => cfg.alpha_exact,
                ChunkKind::Mismatch => -cfg.alpha_exact,
                ChunkKind::Combination => cfg.alpha_comb * c.student.len().max(c.teacher.len()) as f64,
                ChunkKind::GapStudentSide | ChunkKind::GapTeacherSide => cfg.alpha_gap,
                ChunkKind::Group | ChunkKind::SuperGroup => unreachable!("dp never emits groups"),
            };
        }
        prop_assert!((a.score - sum).abs() < 1e-9);
    }

    #[test]
    fn one_prepended_token_adds_one_gap(seq in prop::collection::vec(0u32..6, 1..15), on_student in any::<bool>()) {
        let v = six_with_bos();
        let cfg = AlignScoring::default();
        let base = dp_align_vocab(&seq, &seq, &cfg, &v, &v).unwrap();
        prop_assert!(base.chunks.iter().all(|c| c.kind == ChunkKind::Match));

        let mut longer = vec![6];
        longer.extend(&seq);
        let a = if on_student {
            dp_align_vocab(&longer, &seq, &cfg, &v, &v).unwrap()
        } else {
            dp_align_vocab(&seq, &longer, &cfg, &v, &v).unwrap()
        };
        prop_assert_eq!(a.chunks.len(), base.chunks.len() + 1);
        let gap = &a.chunks[0];
        if on_student {
            prop_assert_eq!(gap.kind, ChunkKind::GapStudentSide);
        } else {
            prop_assert_eq!(gap.kind, ChunkKind::GapTeacherSide);
        }
        for (c, b) in a.chunks[1..].iter().zip(&base.chunks) {
            prop_assert_eq!(c.kind, b.kind);
            let (s_shift, t_shift) = if on_student { (1, 0) } else { (0, 1) };
            prop_assert_eq!(c.student.clone(), b.student.start + s_shift..b.student.end + s_shift);
            prop_assert_eq!(c.teacher.clone(), b.teacher.start + t_shift..b.teacher.end + t_shift);
        }
    }
}

#[test]
fn combination_needs_equal_text() {
    let v = six();
    let a = dp_align_vocab(&[0, 4], &[5], &AlignScoring::default(), &v, &v).unwrap();
    assert_eq!(a.chunks.len(), 1);
    assert_eq!(a.chunks[0].kind, ChunkKind::Combination);
    assert_eq!(a.score, 3.0);

    let b = dp_align_vocab(&[0, 0], &[5], &AlignScoring::default(), &v, &v).unwrap();
    assert!(b.chunks.iter().all(|c| c.kind != ChunkKind::Combination));
}
