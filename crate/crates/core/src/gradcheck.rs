//! Finite-difference checks of the analytic gradients on seeded random
//! toy instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::AlignmentCache;
use crate::chunks::{merge_span, merge_span_backward, PositionLogits};
use crate::losses::{
    common_kl, common_kl_grad, gold, gold_grad_probs, pkl, pkl_grads, CommonSet, HybridWeights, LossMode,
};
use crate::math::{softmax, softmax_backward};
use crate::projection::{build_projection, ProjectionConfig, Provenance, SparseProjection};
use crate::training::{run_step, StepConfig, TeacherInput};
use crate::vocab::{TokenId, Tokenizer, Vocabulary};
use crate::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Entries smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central differences of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub checks: Vec<GradCheck>,
    pub max_rel_error: f64,
}

pub fn random_logits(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    softmax(&random_logits(rng, n), 1.0)
}

/// Random bijective common set between vocabularies of the given sizes.
pub fn random_common_set(rng: &mut impl Rng, n_s: usize, n_t: usize) -> CommonSet {
    let size = rng.gen_range(0..=n_s.min(n_t));
    let mut students: Vec<TokenId> = (0..n_s as TokenId).collect();
    let mut teachers: Vec<TokenId> = (0..n_t as TokenId).collect();
    students.shuffle(rng);
    teachers.shuffle(rng);
    let pairs = students.into_iter().zip(teachers).take(size).collect();
    CommonSet::new(pairs, true).expect("distinct ids")
}

/// Random projection with 1 to 4 positive entries per row, extended so that
/// every teacher id is reachable.
pub fn random_projection(rng: &mut impl Rng, n_s: usize, n_t: usize) -> SparseProjection {
    let mut rows: Vec<Vec<(TokenId, f64)>> = (0..n_s)
        .map(|_| {
            let mut cols: Vec<TokenId> = (0..n_t as TokenId).collect();
            cols.shuffle(rng);
            let k = rng.gen_range(1..=4.min(n_t));
            cols.into_iter().take(k).map(|t| (t, rng.gen_range(0.05..1.0))).collect()
        })
        .collect();
    for t in 0..n_t as TokenId {
        if !rows.iter().flatten().any(|e| e.0 == t) {
            let s = rng.gen_range(0..n_s);
            rows[s].push((t, rng.gen_range(0.05..1.0)));
        }
    }
    let cfg = ProjectionConfig { top_k: n_t, ..Default::default() };
    let rows = rows.into_iter().map(|r| (r, Provenance::MultiToken)).collect();
    SparseProjection::from_rows(n_t, rows, cfg).expect("valid rows")
}

struct Acc {
    name: &'static str,
    instances: usize,
    entries: usize,
    max: f64,
}

impl Acc {
    fn new(name: &'static str) -> Self {
        Acc { name, instances: 0, entries: 0, max: 0.0 }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.instances += 1;
        self.entries += analytic.len();
        self.max = self.max.max(max_error(analytic, numeric));
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            name: self.name.to_string(),
            instances: self.instances,
            entries: self.entries,
            max_rel_error: self.max,
        }
    }
}

/// Runs every check on `instances` seeded instances each.
pub fn run_gradcheck(seed: u64, instances: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut common = Acc::new("common_kl/logits");
    let mut hybrid = Acc::new("gold/logits");
    let mut pkl_z = Acc::new("pkl/logits");
    let mut pkl_w = Acc::new("pkl/projection");
    let mut merge = Acc::new("chain_rule_merge");
    let mut step = Acc::new("step/student_logits");

    for i in 0..instances {
        let n_s = rng.gen_range(2..=12);
        let n_t = rng.gen_range(2..=12);
        let z = random_logits(&mut rng, n_s);
        let p_t = random_distribution(&mut rng, n_t);

        let c = random_common_set(&mut rng, n_s, n_t);
        let analytic = common_kl_grad(&z, &p_t, &c)?;
        let numeric = central_difference(|z| common_kl(&p_t, &softmax(z, 1.0), &c, 0.0), &z, h)?;
        common.add(&analytic, &numeric);

        let hw = HybridWeights::default();
        let p_s = softmax(&z, 1.0);
        let analytic = softmax_backward(&p_s, &gold_grad_probs(&p_t, &p_s, &c, &hw, 0.0)?);
        let numeric = central_difference(|z| gold(&p_t, &softmax(z, 1.0), &c, &hw, 0.0), &z, h)?;
        hybrid.add(&analytic, &numeric);

        let w = random_projection(&mut rng, n_s, n_t);
        let (gz, gw) = pkl_grads(&z, &p_t, &w, 0.0)?;
        pkl_z.add(&gz, &central_difference(|z| pkl(&p_t, &softmax(z, 1.0), &w, 0.0, None), &z, h)?);
        let numeric = central_difference(
            |weights| {
                let mut w2 = w.clone();
                weights.iter().enumerate().for_each(|(e, &v)| w2.set_weight(e, v));
                pkl(&p_t, &p_s, &w2, 0.0, None)
            },
            w.weights(),
            h,
        )?;
        pkl_w.add(&gw, &numeric);

        let positions = rng.gen_range(1..=4);
        let vocab = rng.gen_range(2..=8);
        let tau = rng.gen_range(0.5..2.0);
        let realized: Vec<TokenId> = (0..positions).map(|_| rng.gen_range(0..vocab as TokenId)).collect();
        let raw = random_logits(&mut rng, positions * vocab);
        let upstream = random_logits(&mut rng, vocab);
        let logits = PositionLogits::new(vocab, raw.clone(), realized.clone())?;
        let mut analytic = vec![0.0; raw.len()];
        for (pos, row) in merge_span_backward(&logits, 0..positions, tau, &upstream)? {
            analytic[pos * vocab..(pos + 1) * vocab].copy_from_slice(&row);
        }
        let numeric = central_difference(
            |raw| {
                let l = PositionLogits::new(vocab, raw.to_vec(), realized.clone())?;
                let q = merge_span(&l, 0..positions, tau)?;
                Ok(q.iter().zip(&upstream).map(|(a, b)| a * b).sum())
            },
            &raw,
            h,
        )?;
        merge.add(&analytic, &numeric);

        let mode = [LossMode::Pkl, LossMode::Hkl, LossMode::Gold][i % 3];
        let (analytic, numeric) = step_contract_check(&mut rng, mode)?;
        step.add(&analytic, &numeric);
    }

    let checks: Vec<GradCheck> = [common, hybrid, pkl_z, pkl_w, merge, step].into_iter().map(Acc::finish).collect();
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { seed, step: h, checks, max_rel_error })
}

/// A small two-tokenizer instance for end-to-end checks: the same random
/// text over `{a, b, c}` under two different greedy vocabularies.
pub struct ToyStep {
    pub student_vocab: Vocabulary,
    pub teacher_vocab: Vocabulary,
    pub projection: SparseProjection,
    pub student: PositionLogits,
    pub teacher: PositionLogits,
}

impl ToyStep {
    pub fn random(rng: &mut impl Rng) -> Result<Self> {
        let student_vocab = Vocabulary::from_json(r#"["a","b","c","ab","ca"]"#).expect("static vocabulary");
        let teacher_vocab = Vocabulary::from_json(r#"["a","b","c","bc","abc"]"#).expect("static vocabulary");
        let tok_s = Tokenizer::greedy(student_vocab.clone());
        let tok_t = Tokenizer::greedy(teacher_vocab.clone());
        let len = rng.gen_range(3..=7);
        let text: String = (0..len).map(|_| ['a', 'b', 'c'][rng.gen_range(0..3)]).collect();
        let s_ids = tok_s.encode(&text)?;
        let t_ids = tok_t.encode(&text)?;
        let projection = build_projection(&student_vocab, &teacher_vocab, &tok_t, &ProjectionConfig::default())?;
        let student =
            PositionLogits::new(student_vocab.len(), random_logits(rng, s_ids.len() * student_vocab.len()), s_ids)?;
        let teacher =
            PositionLogits::new(teacher_vocab.len(), random_logits(rng, t_ids.len() * teacher_vocab.len()), t_ids)?;
        Ok(ToyStep { student_vocab, teacher_vocab, projection, student, teacher })
    }
}

/// Analytic step gradient against the stop-gradient contract evaluated by
/// finite differences: `ce_mult * dCE + gamma * dKD` with `gamma` frozen.
fn step_contract_check(rng: &mut impl Rng, mode: LossMode) -> Result<(Vec<f64>, Vec<f64>)> {
    let toy = ToyStep::random(rng)?;
    let cfg = StepConfig { temperature: rng.gen_range(0.5..2.0), ..Default::default() };
    let cache = AlignmentCache::new();
    let teachers = [toy.teacher.clone()];
    let eval = |raw: &[f64], grad: bool| {
        let student = [PositionLogits::new(toy.student_vocab.len(), raw.to_vec(), toy.student.realized().to_vec())?];
        let teacher = TeacherInput {
            name: "toy".into(),
            mode,
            vocab: &toy.teacher_vocab,
            projection: Some(&toy.projection),
            sequences: &teachers,
        };
        run_step(&toy.student_vocab, &student, &[teacher], &cfg, &cache, grad)
    };
    let base = eval(toy.student.raw(), true)?;
    let analytic = base.grad_student.expect("gradient requested").remove(0);
    let numeric = central_difference(
        |raw| {
            let r = eval(raw, false)?;
            Ok(base.ce_multiplier * r.ce_loss + base.kd_multiplier * r.kd_loss)
        },
        toy.student.raw(),
        FD_STEP,
    )?;
    Ok((analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_seeded() {
        let a = run_gradcheck(7, 10).unwrap();
        assert!(a.max_rel_error < 1e-6, "{a:#?}");
        assert_eq!(a, run_gradcheck(7, 10).unwrap());
        assert_eq!(a.checks.len(), 6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-6).abs() < 1e-15);
    }
}
