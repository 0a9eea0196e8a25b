//! One distillation step over stored logits: alignment, chunk merging,
//! per-teacher losses, teacher weighting and KD/CE scaling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{dp_align_vocab, AlignScoring, AlignmentCache, CacheKey, ChunkKind};
use crate::chunks::{merge_span, merge_span_backward, PositionLogits};
use crate::losses::{LossContext, LossMode, LossReport, LossSettings};
use crate::math::{floored_ln, softmax, DEFAULT_LOG_FLOOR};
use crate::projection::SparseProjection;
use crate::vocab::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Below this KD value the dynamic ratio is undefined.
pub const MIN_KD_FOR_SCALING: f64 = 1e-12;

/// How the KD and CE terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingPolicy {
    /// KD rescaled by the constant `L_CE / L_KD`.
    #[default]
    Dynamic,
    Fixed {
        lambda_kd: f64,
        lambda_ce: f64,
    },
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalingPolicy::Dynamic => Ok(()),
            ScalingPolicy::Fixed { lambda_kd, lambda_ce } if lambda_kd >= 0.0 && lambda_ce >= 0.0 => Ok(()),
            ScalingPolicy::Fixed { .. } => {
                Err(Error::InvalidConfig(format!("fixed scaling weights must be >= 0, got {self:?}")))
            }
        }
    }
}

/// Result of [`combine_kd_ce`]. The multipliers are plain data: gradients
/// of the total are `ce_multiplier * dCE + kd_multiplier * dKD`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaled {
    pub total: f64,
    pub kd_multiplier: f64,
    pub ce_multiplier: f64,
}

pub fn combine_kd_ce(l_kd: f64, l_ce: f64, policy: &ScalingPolicy) -> Result<Scaled> {
    policy.validate()?;
    match *policy {
        ScalingPolicy::Dynamic => {
            if !(l_kd > MIN_KD_FOR_SCALING) {
                return Err(Error::InvalidConfig(format!(
                    "dynamic scaling needs L_KD > {MIN_KD_FOR_SCALING:e}, got {l_kd:e}"
                )));
            }
            let gamma = l_ce / l_kd;
            Ok(Scaled { total: gamma * l_kd + l_ce, kd_multiplier: gamma, ce_multiplier: 1.0 })
        }
        ScalingPolicy::Fixed { lambda_kd, lambda_ce } => Ok(Scaled {
            total: lambda_kd * l_kd + lambda_ce * l_ce,
            kd_multiplier: lambda_kd,
            ce_multiplier: lambda_ce,
        }),
    }
}

/// Per-token confidence score used by the adaptive schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    /// Negated cross-entropy of the realized token.
    Ce,
    /// Negated entropy.
    Entropy,
    MaxProb,
}

/// How teachers are weighted against each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSchedule {
    Static { weights: Vec<f64> },
    AdaptiveCe,
    AdaptiveEntropy,
    AdaptiveMaxprob,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule::Static { weights: vec![1.0] }
    }
}

impl WeightSchedule {
    pub fn confidence(&self) -> Option<Confidence> {
        match self {
            WeightSchedule::Static { .. } => None,
            WeightSchedule::AdaptiveCe => Some(Confidence::Ce),
            WeightSchedule::AdaptiveEntropy => Some(Confidence::Entropy),
            WeightSchedule::AdaptiveMaxprob => Some(Confidence::MaxProb),
        }
    }

    pub fn validate(&self, teachers: usize) -> Result<()> {
        if let WeightSchedule::Static { weights } = self {
            if weights.len() != teachers {
                return Err(Error::InvalidConfig(format!("{} static weights for {teachers} teachers", weights.len())));
            }
            let sum: f64 = weights.iter().sum();
            if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("static weights must be >= 0 and sum to 1, got {weights:?}")));
            }
        }
        Ok(())
    }
}

/// One teacher's predictive distributions over a batch: `[sequence][position]`,
/// each paired with the realized token at that position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeacherStats {
    pub sequences: Vec<Vec<(Vec<f64>, TokenId)>>,
}

impl TeacherStats {
    pub fn from_logits(sequences: &[PositionLogits]) -> Self {
        TeacherStats {
            sequences: sequences
                .iter()
                .map(|l| (0..l.positions()).map(|i| (l.softmax_row(i, 1.0), l.realized()[i])).collect())
                .collect(),
        }
    }

    /// Mean per-token score over every position of every sequence.
    pub fn mean_score(&self, kind: Confidence) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, seq) in self.sequences.iter().enumerate() {
            for (n, (p, y)) in seq.iter().enumerate() {
                sum += match kind {
                    Confidence::Ce => {
                        let py = *p.get(*y as usize).ok_or(Error::InvalidId { id: *y, size: p.len() })?;
                        floored_ln(py, DEFAULT_LOG_FLOOR, || format!("position ({b}, {n})"))?
                    }
                    Confidence::Entropy => p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum(),
                    Confidence::MaxProb => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::MismatchedGrid("teacher has no positions".into()));
        }
        Ok(sum / count as f64)
    }
}

/// Softmax of the per-teacher mean scores.
pub fn softmax_weights(mean_scores: &[f64]) -> Vec<f64> {
    softmax(mean_scores, 1.0)
}

/// Confidence-adaptive teacher weights.
///
/// Every teacher must cover the same number of sequences; sequence lengths
/// may differ between teachers since each uses its own tokenization.
pub fn adaptive_weights(kind: Confidence, stats: &[TeacherStats]) -> Result<Vec<f64>> {
    if let Some(first) = stats.first() {
        if let Some((m, s)) = stats.iter().enumerate().find(|(_, s)| s.sequences.len() != first.sequences.len()) {
            return Err(Error::MismatchedGrid(format!(
                "teacher {m} reports {} sequences, teacher 0 reports {}",
                s.sequences.len(),
                first.sequences.len()
            )));
        }
    }
    let means = stats.iter().map(|s| s.mean_score(kind)).collect::<Result<Vec<_>>>()?;
    Ok(softmax_weights(&means))
}

/// `sum_m alpha_m * mean(losses_m)`.
pub fn multi_teacher_kd(per_teacher: &[(&str, &[f64])], alphas: &[f64]) -> Result<f64> {
    if alphas.len() != per_teacher.len() {
        return Err(Error::InvalidConfig(format!("{} weights for {} teachers", alphas.len(), per_teacher.len())));
    }
    let mut total = 0.0;
    for (&(name, losses), &alpha) in per_teacher.iter().zip(alphas) {
        if losses.is_empty() {
            return Err(Error::TeacherWithoutChunks(name.to_string()));
        }
        total += alpha * (losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(total)
}

/// Mean next-token cross-entropy over every position of every sequence,
/// and optionally its gradient per sequence (row-major like the logits).
pub fn cross_entropy(sequences: &[PositionLogits], want_grad: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let positions: usize = sequences.iter().map(PositionLogits::positions).sum();
    if positions == 0 {
        return Err(Error::ShapeMismatch("student has no positions".into()));
    }
    let scale = 1.0 / positions as f64;
    let mut total = 0.0;
    let mut grads = want_grad.then(Vec::new);
    for (b, seq) in sequences.iter().enumerate() {
        let mut g = if want_grad { vec![0.0; seq.raw().len()] } else { Vec::new() };
        for i in 0..seq.positions() {
            let p = seq.softmax_row(i, 1.0);
            let y = seq.realized()[i] as usize;
            total -= floored_ln(p[y], 0.0, || format!("student sequence {b}, position {i}"))?;
            if want_grad {
                let row = &mut g[i * seq.vocab_size()..(i + 1) * seq.vocab_size()];
                for (v, slot) in row.iter_mut().enumerate() {
                    *slot = scale * (p[v] - if v == y { 1.0 } else { 0.0 });
                }
            }
        }
        if let Some(gs) = grads.as_mut() {
            gs.push(g);
        }
    }
    Ok((total * scale, grads))
}

/// Settings of one step; echoed into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub temperature: f64,
    pub policy: ScalingPolicy,
    pub schedule: WeightSchedule,
    pub scoring: AlignScoring,
    pub loss: LossSettings,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            temperature: 1.0,
            policy: ScalingPolicy::default(),
            schedule: WeightSchedule::default(),
            scoring: AlignScoring::default(),
            loss: LossSettings::default(),
        }
    }
}

impl StepConfig {
    pub fn validate(&self, teachers: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.policy.validate()?;
        self.schedule.validate(teachers)?;
        self.scoring.validate()?;
        self.loss.validate()
    }
}

/// One teacher's inputs to [`run_step`]: one logits dump per student
/// sequence, in the same order.
#[derive(Clone, Debug)]
pub struct TeacherInput<'a> {
    pub name: String,
    pub mode: LossMode,
    pub vocab: &'a Vocabulary,
    pub projection: Option<&'a SparseProjection>,
    pub sequences: &'a [PositionLogits],
}

/// Per-teacher part of a [`StepReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub name: String,
    pub alpha: f64,
    /// Aligned chunks that carry a loss, summed over sequences.
    pub loss_chunks: usize,
    pub gap_chunks: usize,
    pub mismatch_chunks: usize,
    pub loss: LossReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub config: StepConfig,
    pub teachers: Vec<TeacherReport>,
    /// `tau^2 * sum_m alpha_m * mean_m`.
    pub kd_loss: f64,
    pub ce_loss: f64,
    pub kd_multiplier: f64,
    pub ce_multiplier: f64,
    pub total: f64,
    /// Set when dynamic scaling met a zero KD term; the KD term is then
    /// dropped and the total is the CE term alone.
    pub kd_scaling_skipped: bool,
    /// `d total / d student logits`, one row-major block per sequence.
    #[serde(skip)]
    pub grad_student: Option<Vec<Vec<f64>>>,
}

struct TeacherOutcome {
    report: TeacherReport,
    /// Gradient of this teacher's chunk mean w.r.t. student logits.
    grad_mean: Option<Vec<Vec<f64>>>,
    grad_w_mean: Option<Vec<f64>>,
}

fn run_teacher(
    vs: &Vocabulary,
    vs_hash: &str,
    student: &[PositionLogits],
    teacher: &TeacherInput<'_>,
    cfg: &StepConfig,
    cache: &AlignmentCache,
    want_grad: bool,
) -> Result<TeacherOutcome> {
    if teacher.sequences.len() != student.len() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} has {} sequences, student has {}",
            teacher.name,
            teacher.sequences.len(),
            student.len()
        )));
    }
    if teacher.mode.needs_projection() && teacher.projection.is_none() {
        return Err(Error::MissingProjection(teacher.name.clone()));
    }
    let ctx = LossContext::new(teacher.mode, vs, teacher.vocab, teacher.projection, cfg.loss)?;
    let vt_hash = teacher.vocab.content_hash();
    let tau = cfg.temperature;

    let mut per_chunk = Vec::new();
    let mut grads_p: Vec<(usize, std::ops::Range<usize>, Vec<f64>)> = Vec::new();
    let mut grad_w_sum: Option<Vec<f64>> = None;
    let (mut gaps, mut mismatches) = (0, 0);

    for (b, (s_logits, t_logits)) in student.iter().zip(teacher.sequences).enumerate() {
        if t_logits.vocab_size() != teacher.vocab.len() || s_logits.vocab_size() != vs.len() {
            return Err(Error::ShapeMismatch(format!("sequence {b}: logits width does not match the vocabulary")));
        }
        let key = CacheKey::new(vs_hash, &vt_hash, s_logits.realized(), t_logits.realized(), &cfg.scoring);
        let alignment = cache.get_or_try_insert(key, || {
            dp_align_vocab(s_logits.realized(), t_logits.realized(), &cfg.scoring, vs, teacher.vocab)
        })?;
        gaps += alignment.count(ChunkKind::GapStudentSide) + alignment.count(ChunkKind::GapTeacherSide);
        mismatches += alignment.count(ChunkKind::Mismatch);
        for (_, chunk) in alignment.loss_chunks() {
            let q_s = merge_span(s_logits, chunk.student.clone(), tau)?;
            let q_t = merge_span(t_logits, chunk.teacher.clone(), tau)?;
            let out = ctx.evaluate(&q_t, &q_s)?;
            per_chunk.push(out.value);
            if want_grad {
                grads_p.push((b, chunk.student.clone(), out.grad_p_s));
                if let Some(gw) = out.grad_w {
                    match grad_w_sum.as_mut() {
                        None => grad_w_sum = Some(gw),
                        Some(acc) => acc.iter_mut().zip(&gw).for_each(|(a, g)| *a += g),
                    }
                }
            }
        }
    }
    if per_chunk.is_empty() {
        return Err(Error::TeacherWithoutChunks(teacher.name.clone()));
    }
    let k = per_chunk.len() as f64;

    let grad_mean = if want_grad {
        let mut out: Vec<Vec<f64>> = student.iter().map(|s| vec![0.0; s.raw().len()]).collect();
        for (b, span, grad_q) in grads_p {
            let v = student[b].vocab_size();
            for (pos, row) in merge_span_backward(&student[b], span, tau, &grad_q)? {
                out[b][pos * v..(pos + 1) * v].iter_mut().zip(&row).for_each(|(o, g)| *o += g / k);
            }
        }
        Some(out)
    } else {
        None
    };
    let grad_w_mean = grad_w_sum.map(|g| g.into_iter().map(|v| v / k).collect());

    let loss = LossReport::new(teacher.mode, tau, per_chunk)?;
    Ok(TeacherOutcome {
        report: TeacherReport {
            name: teacher.name.clone(),
            alpha: 0.0,
            loss_chunks: loss.per_chunk.len(),
            gap_chunks: gaps,
            mismatch_chunks: mismatches,
            loss,
        },
        grad_mean,
        grad_w_mean,
    })
}

/// Runs one distillation step over stored logits.
///
/// Each student sequence is aligned against every teacher's tokenization
/// of the same text, loss-bearing chunks are merged and scored in the
/// teacher's mode, teacher means are weighted by the schedule, scaled by
/// `tau^2`, and combined with the student's cross-entropy. Teachers are
/// evaluated in parallel; reduction order is fixed, so the report is
/// reproducible bit for bit. No parameters are updated.
pub fn run_step(
    student_vocab: &Vocabulary,
    student: &[PositionLogits],
    teachers: &[TeacherInput<'_>],
    cfg: &StepConfig,
    cache: &AlignmentCache,
    want_grad: bool,
) -> Result<StepReport> {
    cfg.validate(teachers.len())?;
    if teachers.is_empty() {
        return Err(Error::InvalidConfig("at least one teacher is required".into()));
    }
    let vs_hash = student_vocab.content_hash();
    let outcomes = teachers
        .par_iter()
        .map(|t| run_teacher(student_vocab, &vs_hash, student, t, cfg, cache, want_grad))
        .collect::<Result<Vec<_>>>()?;

    let alphas = match (&cfg.schedule, cfg.schedule.confidence()) {
        (WeightSchedule::Static { weights }, _) => weights.clone(),
        (_, Some(kind)) => {
            let stats: Vec<TeacherStats> = teachers.iter().map(|t| TeacherStats::from_logits(t.sequences)).collect();
            adaptive_weights(kind, &stats)?
        }
        (_, None) => unreachable!("non-static schedules carry a confidence kind"),
    };

    let means: Vec<(&str, &[f64])> =
        outcomes.iter().map(|o| (o.report.name.as_str(), o.report.loss.per_chunk.as_slice())).collect();
    let tau2 = cfg.temperature * cfg.temperature;
    let kd_loss = tau2 * multi_teacher_kd(&means, &alphas)?;
    let (ce_loss, ce_grad) = cross_entropy(student, want_grad)?;

    let (scaled, skipped) = match cfg.policy {
        ScalingPolicy::Dynamic if !(kd_loss > MIN_KD_FOR_SCALING) => {
            (Scaled { total: ce_loss, kd_multiplier: 0.0, ce_multiplier: 1.0 }, true)
        }
        policy => (combine_kd_ce(kd_loss, ce_loss, &policy)?, false),
    };

    let grad_student = ce_grad.map(|mut grad| {
        for g in grad.iter_mut().flatten() {
            *g *= scaled.ce_multiplier;
        }
        for (o, &alpha) in outcomes.iter().zip(&alphas) {
            let factor = scaled.kd_multiplier * tau2 * alpha;
            if let Some(gm) = &o.grad_mean {
                for (dst, src) in grad.iter_mut().zip(gm) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += factor * s);
                }
            }
        }
        grad
    });

    let teachers = outcomes
        .into_iter()
        .zip(&alphas)
        .map(|(o, &alpha)| {
            let factor = scaled.kd_multiplier * tau2 * alpha;
            let mut report = o.report;
            report.alpha = alpha;
            report.loss.grad_w = o.grad_w_mean.map(|g| g.into_iter().map(|v| v * factor).collect());
            report
        })
        .collect();

    Ok(StepReport {
        config: cfg.clone(),
        teachers,
        kd_loss,
        ce_loss,
        kd_multiplier: scaled.kd_multiplier,
        ce_multiplier: scaled.ce_multiplier,
        total: scaled.total,
        kd_scaling_skipped: skipped,
        grad_student,
    })
}
