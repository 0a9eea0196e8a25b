//! Chunk-level distributions.
//!
//! A chunk spanning several tokens on one side is collapsed into a single
//! distribution over that side's vocabulary: the first position's
//! distribution, with the entry of the realized first token replaced by the
//! probability of the whole realized span (the product of per-position
//! probabilities of the realized tokens), then renormalized. A one-token
//! chunk is just that position's softmax.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::align::AlignmentChunk;
use crate::math::{softmax, softmax_backward};
use crate::vocab::TokenId;
use crate::{Error, Result};

/// Teacher-side support size used when none is configured.
pub const DEFAULT_TOP_K: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Student,
    Teacher,
}

/// Per-position logits for one sequence. Row `i` is the predictive
/// distribution (as logits) for the realized token at position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionLogits {
    vocab_size: usize,
    logits: Vec<f64>,
    realized: Vec<TokenId>,
}

impl PositionLogits {
    pub fn new(vocab_size: usize, logits: Vec<f64>, realized: Vec<TokenId>) -> Result<Self> {
        if logits.len() != vocab_size * realized.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for {} positions over a vocabulary of {}",
                logits.len(),
                realized.len(),
                vocab_size
            )));
        }
        if let Some(&id) = realized.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::InvalidId { id, size: vocab_size });
        }
        Ok(PositionLogits { vocab_size, logits, realized })
    }

    /// Builds from `f64` rows, one per position.
    pub fn from_rows(rows: &[Vec<f64>], realized: Vec<TokenId>) -> Result<Self> {
        let vocab_size = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab_size) || rows.len() != realized.len() {
            return Err(Error::ShapeMismatch("ragged logits rows".into()));
        }
        let logits = rows.iter().flatten().copied().collect();
        PositionLogits::new(vocab_size, logits, realized)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn positions(&self) -> usize {
        self.realized.len()
    }

    pub fn realized(&self) -> &[TokenId] {
        &self.realized
    }

    /// Row-major `positions x vocab_size` logits.
    pub fn raw(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.logits[i * self.vocab_size..(i + 1) * self.vocab_size].to_vec()
    }

    pub fn softmax_row(&self, i: usize, temperature: f64) -> Vec<f64> {
        softmax(&self.row(i), temperature)
    }
}

/// A probability vector over one side's vocabulary for one aligned chunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkDistribution {
    pub chunk: usize,
    pub side: Side,
    pub probs: Vec<f64>,
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")))
    }
}

fn check_span(logits: &PositionLogits, span: &Range<usize>) -> Result<()> {
    if span.is_empty() || span.end > logits.positions() {
        return Err(Error::ShapeMismatch(format!(
            "span {span:?} is empty or outside {} positions",
            logits.positions()
        )));
    }
    Ok(())
}

/// Merges the positions in `span` into one distribution (see module docs).
pub fn merge_span(logits: &PositionLogits, span: Range<usize>, temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    check_span(logits, &span)?;
    let first = span.start;
    let mut q = logits.softmax_row(first, temperature);
    if span.len() == 1 {
        return Ok(q);
    }
    let a1 = logits.realized[first] as usize;
    let span_prob: f64 =
        span.clone().map(|i| logits.softmax_row(i, temperature)[logits.realized[i] as usize]).product();
    q[a1] = span_prob;
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    Ok(q)
}

/// Reverse pass of [`merge_span`]: given `dL/dq`, returns `dL/dz` for every
/// position of the span, as `(position, gradient row)` pairs.
pub fn merge_span_backward(
    logits: &PositionLogits,
    span: Range<usize>,
    temperature: f64,
    grad_q: &[f64],
) -> Result<Vec<(usize, Vec<f64>)>> {
    check_temperature(temperature)?;
    check_span(logits, &span)?;
    let scale = |row: Vec<f64>| row.into_iter().map(|v| v / temperature).collect::<Vec<_>>();
    let probs: Vec<Vec<f64>> = span.clone().map(|i| logits.softmax_row(i, temperature)).collect();
    if span.len() == 1 {
        return Ok(vec![(span.start, scale(softmax_backward(&probs[0], grad_q)))]);
    }

    let realized: Vec<usize> = span.clone().map(|i| logits.realized[i] as usize).collect();
    let realized_probs: Vec<f64> = probs.iter().zip(&realized).map(|(p, &a)| p[a]).collect();
    let product_except = |skip: usize| -> f64 {
        realized_probs.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, p)| p).product()
    };

    let mut pre = probs[0].clone();
    pre[realized[0]] = realized_probs.iter().product();
    let total: f64 = pre.iter().sum();
    let dot: f64 = pre.iter().zip(grad_q).map(|(p, g)| g * p / total).sum();
    let grad_pre: Vec<f64> = grad_q.iter().map(|g| (g - dot) / total).collect();
    let grad_span = grad_pre[realized[0]];

    let mut out = Vec::with_capacity(span.len());
    for (offset, position) in span.enumerate() {
        let h = if offset == 0 {
            let mut h = grad_pre.clone();
            h[realized[0]] = grad_span * product_except(0);
            h
        } else {
            let mut h = vec![0.0; logits.vocab_size];
            h[realized[offset]] = grad_span * product_except(offset);
            h
        };
        out.push((position, scale(softmax_backward(&probs[offset], &h))));
    }
    Ok(out)
}

/// Chunk distribution for one side of an aligned chunk.
pub fn chain_rule_merge(
    logits: &PositionLogits,
    chunk: &AlignmentChunk,
    chunk_index: usize,
    side: Side,
    temperature: f64,
) -> Result<ChunkDistribution> {
    if !chunk.in_loss() {
        return Err(Error::ChunkExcluded(chunk_index));
    }
    let span = match side {
        Side::Student => chunk.student.clone(),
        Side::Teacher => chunk.teacher.clone(),
    };
    Ok(ChunkDistribution { chunk: chunk_index, side, probs: merge_span(logits, span, temperature)? })
}

/// Ids of the `k` most probable entries (ties to the smaller id), returned
/// in ascending id order. `k` is clipped to the vector length.
pub fn topk_support(probs: &[f64], k: usize) -> Vec<TokenId> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k.min(probs.len()));
    order.sort_unstable();
    order.into_iter().map(|i| i as TokenId).collect()
}

/// Restricts `probs` to `support` and renormalizes there.
pub fn restrict_renormalize(probs: &[f64], support: &[TokenId]) -> Result<Vec<f64>> {
    let mass: f64 = support.iter().map(|&t| probs[t as usize]).sum();
    if mass < 1e-12 {
        return Err(Error::DegenerateSupport(mass));
    }
    let mut out = vec![0.0; probs.len()];
    for &t in support {
        out[t as usize] = probs[t as usize] / mass;
    }
    Ok(out)
}

/// Reverse pass of [`restrict_renormalize`]: maps `dL/d out` to `dL/d probs`.
pub fn restrict_renormalize_backward(probs: &[f64], support: &[TokenId], grad_out: &[f64]) -> Vec<f64> {
    let mass: f64 = support.iter().map(|&t| probs[t as usize]).sum();
    let dot: f64 = support.iter().map(|&t| grad_out[t as usize] * probs[t as usize] / mass).sum();
    let mut grad = vec![0.0; probs.len()];
    for &t in support {
        grad[t as usize] = (grad_out[t as usize] - dot) / mass;
    }
    grad
}

/// Restricts both distributions to the teacher's top-`k` support and
/// renormalizes each there. `k >= |V|` returns both unchanged.
pub fn topk_truncate(
    teacher: &ChunkDistribution,
    student: &ChunkDistribution,
    k: usize,
) -> Result<(ChunkDistribution, ChunkDistribution)> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k must be at least 1".into()));
    }
    if teacher.probs.len() != student.probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "teacher has {} entries, student {}",
            teacher.probs.len(),
            student.probs.len()
        )));
    }
    if k >= teacher.probs.len() {
        return Ok((teacher.clone(), student.clone()));
    }
    let support = topk_support(&teacher.probs, k);
    let s = restrict_renormalize(&student.probs, &support)?;
    let t = restrict_renormalize(&teacher.probs, &support)?;
    Ok((ChunkDistribution { probs: t, ..teacher.clone() }, ChunkDistribution { probs: s, ..student.clone() }))
}
