use ctkd::align::AlignmentCache;
use ctkd::audit::{audit_coverage, default_rules, recommend_mode, CoverageRow};
use ctkd::chunks::PositionLogits;
use ctkd::gradcheck::ToyStep;
use ctkd::losses::{build_common_set_exact, LossMode};
use ctkd::training::{
    multi_teacher_kd, run_step, softmax_weights, ScalingPolicy, StepConfig, TeacherInput, WeightSchedule,
};
use ctkd::vocab::{make_toy_tokenizer, TokenId, ToyKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::bytes::Regex;

proptest! {
    #[test]
    fn adaptive_weights_are_shift_invariant(
        scores in prop::collection::vec(-5.0f64..5.0, 1..8),
        shift in -20.0f64..20.0,
    ) {
        let a = softmax_weights(&scores);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(a.iter().all(|&x| x > 0.0));
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for (x, y) in a.iter().zip(softmax_weights(&shifted)) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_scores_give_uniform_weights(score in -5.0f64..5.0, n in 1usize..10) {
        for a in softmax_weights(&vec![score; n]) {
            prop_assert!((a - 1.0 / n as f64).abs() <= 1e-15);
        }
    }

    #[test]
    fn multi_teacher_kd_is_linear_in_each_mean(
        a in prop::collection::vec(0.0f64..3.0, 1..6),
        b in prop::collection::vec(0.0f64..3.0, 1..6),
        alpha in 0.0f64..1.0,
        scale in 0.0f64..4.0,
    ) {
        let alphas = [alpha, 1.0 - alpha];
        let base = multi_teacher_kd(&[("a", &a), ("b", &b)], &alphas).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let scaled = multi_teacher_kd(&[("a", &a2), ("b", &b)], &alphas).unwrap();
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        prop_assert!((scaled - (base + alpha * (scale - 1.0) * mean_a)).abs() <= 1e-12);
    }

    #[test]
    fn lowering_critical_coverage_never_selects_hkl(
        fractions in prop::collection::vec(0.0f64..=1.0, 2),
        which in 0usize..2,
        drop in 0.0f64..=1.0,
        threshold in 0.0f64..=1.0,
    ) {
        let row = |name: &str, f: f64| CoverageRow { category: name.into(), matched: 0, size: 1, fraction: Some(f) };
        let critical = vec!["x".to_string(), "y".to_string()];
        let before = vec![row("x", fractions[0]), row("y", fractions[1])];
        let mut after = before.clone();
        after[which].fraction = Some(fractions[which] * (1.0 - drop));
        let m0 = recommend_mode(&before, &critical, threshold).unwrap();
        let m1 = recommend_mode(&after, &critical, threshold).unwrap();
        prop_assert!(!(m0 == LossMode::Pkl && m1 == LossMode::Hkl));
    }
}

#[test]
fn dynamic_total_is_twice_ce_and_reports_repeat() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let toy = ToyStep::random(&mut rng).unwrap();
        let teachers = [toy.teacher.clone()];
        let input = TeacherInput {
            name: "t".into(),
            mode: LossMode::Pkl,
            vocab: &toy.teacher_vocab,
            projection: Some(&toy.projection),
            sequences: &teachers,
        };
        let cfg = StepConfig::default();
        let student = [toy.student.clone()];
        let a =
            run_step(&toy.student_vocab, &student, std::slice::from_ref(&input), &cfg, &AlignmentCache::new(), true)
                .unwrap();
        let b = run_step(&toy.student_vocab, &student, &[input], &cfg, &AlignmentCache::new(), true).unwrap();
        assert!(a.kd_loss > 0.0);
        assert!((a.total - 2.0 * a.ce_loss).abs() <= 1e-12);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.grad_student, b.grad_student);
    }
}

#[test]
fn identical_teacher_gives_zero_kd_and_ce_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let toy = ToyStep::random(&mut rng).unwrap();
    let same = [toy.student.clone()];
    let input = TeacherInput {
        name: "self".into(),
        mode: LossMode::Kl,
        vocab: &toy.student_vocab,
        projection: None,
        sequences: &same,
    };
    let r =
        run_step(&toy.student_vocab, &same, &[input], &StepConfig::default(), &AlignmentCache::new(), false).unwrap();
    assert!(r.kd_loss.abs() < 1e-12);
    assert!(r.kd_scaling_skipped);
    assert_eq!(r.total, r.ce_loss);
}

#[test]
fn adaptive_schedule_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let toy = ToyStep::random(&mut rng).unwrap();
    let (t1, t2) = ([toy.teacher.clone()], [toy.student.clone()]);
    let inputs = [
        TeacherInput {
            name: "proj".into(),
            mode: LossMode::Hkl,
            vocab: &toy.teacher_vocab,
            projection: Some(&toy.projection),
            sequences: &t1,
        },
        TeacherInput {
            name: "self".into(),
            mode: LossMode::Gold,
            vocab: &toy.student_vocab,
            projection: None,
            sequences: &t2,
        },
    ];
    for schedule in [WeightSchedule::AdaptiveCe, WeightSchedule::AdaptiveEntropy, WeightSchedule::AdaptiveMaxprob] {
        let cfg = StepConfig {
            schedule,
            policy: ScalingPolicy::Fixed { lambda_kd: 1.0, lambda_ce: 1.0 },
            ..Default::default()
        };
        let r = run_step(
            &toy.student_vocab,
            std::slice::from_ref(&toy.student),
            &inputs,
            &cfg,
            &AlignmentCache::new(),
            false,
        )
        .unwrap();
        let sum: f64 = r.teachers.iter().map(|t| t.alpha).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn audit_counts_match_a_naive_scan() {
    let corpus = ["year 1999 had 12 cats", "the total was 305"];
    let student = make_toy_tokenizer(ToyKind::WordLevel, &corpus);
    for kind in [ToyKind::DigitSplitting, ToyKind::NumeralPreserving, ToyKind::CharLevel, ToyKind::WordLevel] {
        let teacher = make_toy_tokenizer(kind, &corpus);
        let (vs, vt) = (student.vocab(), teacher.vocab());
        let c = build_common_set_exact(vs, vt);
        let rows = audit_coverage(vs, &c, &default_rules()).unwrap();
        for (rule, row) in default_rules().iter().zip(&rows) {
            let re = Regex::new(&rule.pattern).unwrap();
            let (mut size, mut matched) = (0, 0);
            for s in 0..vs.len() as TokenId {
                if vs.is_special(s) || !re.is_match(vs.canonical(s).as_bytes()) {
                    continue;
                }
                size += 1;
                if c.pairs().iter().any(|&(a, _)| a == s) {
                    matched += 1;
                }
            }
            assert_eq!((row.size, row.matched), (size, matched), "{} vs {kind:?}", rule.name);
        }
    }
}

#[test]
fn cross_entropy_logits_convention() {
    // Row i scores realized token i.
    let logits = PositionLogits::from_rows(&[vec![0.0, 0.0], vec![2.0_f64.ln(), 0.0]], vec![0, 0]).unwrap();
    let (ce, _) = ctkd::training::cross_entropy(&[logits], false).unwrap();
    let expected = -(0.5f64.ln() + (2.0f64 / 3.0).ln()) / 2.0;
    assert!((ce - expected).abs() < 1e-15);
}
