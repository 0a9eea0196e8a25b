use ctkd::chunks::{merge_span, topk_support, topk_truncate, ChunkDistribution, PositionLogits, Side};
use ctkd::gradcheck::{random_distribution, random_logits};
use ctkd::math::softmax;
use ctkd::projection::{build_projection, ProjectionConfig, Provenance, SparseProjection};
use ctkd::vocab::{make_toy_tokenizer, TokenId, Tokenizer, ToyKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS: &[&str] = &["the year was 1999", "cats and dogs", "total score of items"];

fn toy_pair() -> (Tokenizer, Tokenizer) {
    (make_toy_tokenizer(ToyKind::NumeralPreserving, CORPUS), make_toy_tokenizer(ToyKind::DigitSplitting, CORPUS))
}

fn build(top_k: usize, max_span: usize) -> SparseProjection {
    let (s, t) = toy_pair();
    let cfg = ProjectionConfig { top_k, max_span, ..Default::default() };
    build_projection(s.vocab(), t.vocab(), &t, &cfg).unwrap()
}

/// Random distribution over the rows that have entries.
fn on_nonempty_rows(rng: &mut impl Rng, w: &SparseProjection) -> Vec<f64> {
    let rows: Vec<usize> = (0..w.student_size()).filter(|&s| w.provenance(s as TokenId) != Provenance::Empty).collect();
    let k = rng.gen_range(1..=rows.len().min(40));
    let mass = random_distribution(rng, k);
    let mut p = vec![0.0; w.student_size()];
    for m in mass {
        p[rows[rng.gen_range(0..rows.len())]] += m;
    }
    p
}

#[test]
fn untruncated_projection_preserves_mass() {
    let w = build(usize::MAX >> 1, 8);
    assert_eq!(w.summary().truncated_rows, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let p = on_nonempty_rows(&mut rng, &w);
        let total: f64 = w.project_raw(&p).iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
    }
}

#[test]
fn truncated_projection_is_a_distribution_after_renormalizing() {
    let w = build(1, 4);
    assert!(w.summary().truncated_rows > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let p = on_nonempty_rows(&mut rng, &w);
        let q = w.project(&p).unwrap();
        assert!(q.iter().all(|&v| v >= 0.0));
        assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn exact_rows_keep_weight_one() {
    let w = build(4, 4);
    let mut exact = 0;
    for s in 0..w.student_size() as TokenId {
        if w.provenance(s) == Provenance::Exact {
            exact += 1;
            assert_eq!(w.top1(s).unwrap().1, 1.0);
        }
    }
    assert!(exact > 100);
}

#[test]
fn truncation_keeps_top1() {
    let full = build(64, 4);
    for k in 1..4 {
        let cut = build(k, 4);
        for s in 0..full.student_size() as TokenId {
            assert_eq!(cut.top1(s), full.top1(s), "row {s}, k {k}");
            assert!(cut.entry_range(s).len() <= k);
        }
    }
}

#[test]
fn build_is_deterministic() {
    assert_eq!(build(4, 4).to_jsonl(), build(4, 4).to_jsonl());
}

#[test]
fn multi_digit_rows_follow_digit_pieces() {
    let (s, t) = toy_pair();
    let w = build(4, 4);
    let id = s.vocab().id_of("201").unwrap();
    let row: Vec<(TokenId, f64)> = w.row(id).collect();
    let two = t.vocab().id_of("2").unwrap();
    assert_eq!(row[0].0, two);
    assert!((row[0].1 - 0.9009).abs() < 1e-4);
    assert_eq!(row.len(), 3);
}

#[test]
fn length_one_merge_at_unit_temperature_is_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let v = rng.gen_range(1..=10);
        let n = rng.gen_range(1..=5);
        let raw = random_logits(&mut rng, v * n);
        let realized = (0..n).map(|_| rng.gen_range(0..v) as TokenId).collect();
        let logits = PositionLogits::new(v, raw.clone(), realized).unwrap();
        for i in 0..n {
            let merged = merge_span(&logits, i..i + 1, 1.0).unwrap();
            let direct = softmax(&raw[i * v..(i + 1) * v], 1.0);
            for (a, b) in merged.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}

proptest! {
    #[test]
    fn merged_spans_are_distributions(seed in any::<u64>(), tau in 0.25f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.gen_range(1..=10);
        let n = rng.gen_range(1..=6);
        let realized = (0..n).map(|_| rng.gen_range(0..v) as TokenId).collect();
        let logits = PositionLogits::new(v, random_logits(&mut rng, v * n), realized).unwrap();
        let start = rng.gen_range(0..n);
        let end = rng.gen_range(start + 1..=n);
        let q = merge_span(&logits, start..end, tau).unwrap();
        prop_assert!(q.iter().all(|&x| x >= 0.0));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn topk_support_grows_with_k(probs in prop::collection::vec(0.0f64..1.0, 1..20), k in 1usize..20) {
        let small = topk_support(&probs, k);
        let large = topk_support(&probs, k + 1);
        prop_assert!(small.iter().all(|t| large.contains(t)));
    }

    #[test]
    fn truncated_pairs_are_distributions(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=10);
        let t = ChunkDistribution { chunk: 0, side: Side::Teacher, probs: random_distribution(&mut rng, n) };
        let s = ChunkDistribution { chunk: 0, side: Side::Student, probs: random_distribution(&mut rng, n) };
        let (t2, s2) = topk_truncate(&t, &s, k).unwrap();
        for d in [&t2.probs, &s2.probs] {
            prop_assert!(d.iter().all(|&x| x >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(d.iter().filter(|&&x| x > 0.0).count() <= k);
        }
    }
}
