//! Chunk-level distillation losses and their gradients.
//!
//! All kernels take the teacher distribution first. Distributions are full
//! vocabulary vectors; nothing is renormalized over the common set.

mod common;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use common::{build_common_set_exact, build_common_set_relaxed, CommonSet};

use crate::chunks::{restrict_renormalize, restrict_renormalize_backward, topk_support, DEFAULT_TOP_K};
use crate::math::{floored_ln, kl_divergence, kl_divergence_grad_q, softmax, softmax_backward, DEFAULT_LOG_FLOOR};
use crate::projection::SparseProjection;
use crate::vocab::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Mixing weights of the hybrid (common-KL + ULD) loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridWeights {
    pub lambda_kl: f64,
    pub lambda_uld: f64,
}

impl Default for HybridWeights {
    fn default() -> Self {
        HybridWeights { lambda_kl: 1.0, lambda_uld: 1.0 }
    }
}

impl HybridWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_kl >= 0.0 && self.lambda_uld >= 0.0 && self.lambda_kl.is_finite() && self.lambda_uld.is_finite()
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("hybrid weights must be finite and non-negative, got {self:?}")))
        }
    }
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{what} has {} entries, expected {n}", v.len())))
    }
}

/// Partial KL over the common pairs:
/// `sum_{(s,t)} p_t[t] (ln p_t[t] - ln p_s[s])`, with `floor` inside the logs.
pub fn common_kl(p_t: &[f64], p_s: &[f64], c: &CommonSet, floor: f64) -> Result<f64> {
    c.masks(p_s.len(), p_t.len())?;
    let mut total = 0.0;
    for &(s, t) in c.pairs() {
        let pt = p_t[t as usize];
        if pt > 0.0 {
            let ls = floored_ln(p_s[s as usize], floor, || format!("student prob of common token {s} is 0"))?;
            total += pt * ((pt + floor).ln() - ls);
        }
    }
    Ok(total)
}

/// `d common_kl / d p_s`.
pub fn common_kl_grad_probs(p_t: &[f64], p_s: &[f64], c: &CommonSet, floor: f64) -> Result<Vec<f64>> {
    c.masks(p_s.len(), p_t.len())?;
    let mut grad = vec![0.0; p_s.len()];
    for &(s, t) in c.pairs() {
        let pt = p_t[t as usize];
        if pt > 0.0 {
            grad[s as usize] = -pt / (p_s[s as usize] + floor);
        }
    }
    Ok(grad)
}

/// Closed-form gradient of [`common_kl`] (no floor) with respect to the
/// student logits `z_s`, where `p_s = softmax(z_s)`.
///
/// With `M = sum of p_t over common teacher ids`, an uncommon `j` gets
/// `p_s[j] * M` and a common `j` paired with `t` gets `p_s[j] * M - p_t[t]`.
/// The uncommon entries are therefore never negative.
pub fn common_kl_grad(z_s: &[f64], p_t: &[f64], c: &CommonSet) -> Result<Vec<f64>> {
    c.masks(z_s.len(), p_t.len())?;
    let p_s = softmax(z_s, 1.0);
    let mass: f64 = c.pairs().iter().map(|&(_, t)| p_t[t as usize]).sum();
    let mut grad: Vec<f64> = p_s.iter().map(|p| p * mass).collect();
    for &(s, t) in c.pairs() {
        grad[s as usize] -= p_t[t as usize];
    }
    Ok(grad)
}

/// Uncommon entries of `p` as `(id, prob)`, sorted by descending
/// probability, ties by ascending id.
fn sorted_uncommon(p: &[f64], common: &[bool]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = p.iter().copied().enumerate().filter(|&(i, _)| !common[i]).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

type Ranked = Vec<(usize, f64)>;

fn uld_parts(p_t: &[f64], p_s: &[f64], c: &CommonSet) -> Result<(Ranked, Ranked)> {
    let (ms, mt) = c.masks(p_s.len(), p_t.len())?;
    Ok((sorted_uncommon(p_t, &mt), sorted_uncommon(p_s, &ms)))
}

/// Rank-sorted L1 distance between the uncommon restrictions (not
/// renormalized). The shorter sorted vector is padded with zeros.
pub fn uld(p_t: &[f64], p_s: &[f64], c: &CommonSet) -> Result<f64> {
    let (t, s) = uld_parts(p_t, p_s, c)?;
    let n = t.len().max(s.len());
    let at = |v: &[(usize, f64)], i: usize| v.get(i).map_or(0.0, |e| e.1);
    Ok((0..n).map(|i| (at(&s, i) - at(&t, i)).abs()).sum())
}

/// Subgradient of [`uld`] with respect to `p_s` (0 where ranks tie exactly).
pub fn uld_grad_probs(p_t: &[f64], p_s: &[f64], c: &CommonSet) -> Result<Vec<f64>> {
    let (t, s) = uld_parts(p_t, p_s, c)?;
    let mut grad = vec![0.0; p_s.len()];
    for (rank, &(id, ps)) in s.iter().enumerate() {
        let pt = t.get(rank).map_or(0.0, |e| e.1);
        grad[id] = if ps > pt {
            1.0
        } else if ps < pt {
            -1.0
        } else {
            0.0
        };
    }
    Ok(grad)
}

/// `lambda_kl * common_kl + lambda_uld * uld`.
pub fn gold(p_t: &[f64], p_s: &[f64], c: &CommonSet, hw: &HybridWeights, floor: f64) -> Result<f64> {
    Ok(hw.lambda_kl * common_kl(p_t, p_s, c, floor)? + hw.lambda_uld * uld(p_t, p_s, c)?)
}

pub fn gold_grad_probs(p_t: &[f64], p_s: &[f64], c: &CommonSet, hw: &HybridWeights, floor: f64) -> Result<Vec<f64>> {
    let kl = common_kl_grad_probs(p_t, p_s, c, floor)?;
    let l1 = uld_grad_probs(p_t, p_s, c)?;
    Ok(kl.iter().zip(&l1).map(|(a, b)| hw.lambda_kl * a + hw.lambda_uld * b).collect())
}

fn projected(p_s: &[f64], w: &SparseProjection, support: Option<&[TokenId]>) -> Result<Vec<f64>> {
    match support {
        None => w.project(p_s),
        Some(sup) => w.project_on_support(p_s, sup),
    }
}

/// `KL(p_t || project(p_s))`. With a `support`, the projection is restricted
/// to it and renormalized there (`p_t` is expected to live on it already).
pub fn pkl(p_t: &[f64], p_s: &[f64], w: &SparseProjection, floor: f64, support: Option<&[TokenId]>) -> Result<f64> {
    check_len(p_t, w.teacher_size(), "teacher distribution")?;
    let q = projected(p_s, w, support)?;
    kl_divergence(p_t, &q, floor)
}

/// Gradients of [`pkl`] with respect to `p_s` and to every stored entry of `w`.
pub fn pkl_grad_probs(
    p_t: &[f64],
    p_s: &[f64],
    w: &SparseProjection,
    floor: f64,
    support: Option<&[TokenId]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(p_t, w.teacher_size(), "teacher distribution")?;
    let q = projected(p_s, w, support)?;
    let grad_q = kl_divergence_grad_q(p_t, &q, floor);
    w.pullback(p_s, &grad_q, support)
}

/// Gradients of [`pkl`] with respect to the student logits (`p_s =
/// softmax(z_s)`) and the entries of `w`.
pub fn pkl_grads(z_s: &[f64], p_t: &[f64], w: &SparseProjection, floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let p_s = softmax(z_s, 1.0);
    let (grad_p, grad_w) = pkl_grad_probs(p_t, &p_s, w, floor, None)?;
    Ok((softmax_backward(&p_s, &grad_p), grad_w))
}

/// The hybrid loss over the common set widened by `w`.
pub fn hkl(p_t: &[f64], p_s: &[f64], w: &SparseProjection, hw: &HybridWeights, floor: f64) -> Result<f64> {
    gold(p_t, p_s, &build_common_set_relaxed(w), hw, floor)
}

/// `tau^2` times the mean of the per-chunk values.
pub fn kd_aggregate(per_chunk: &[f64], temperature: f64) -> Result<f64> {
    if per_chunk.is_empty() {
        return Err(Error::NoChunks);
    }
    let sum: f64 = per_chunk.iter().sum();
    Ok(temperature * temperature * (sum / per_chunk.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Pkl,
    Hkl,
    Gold,
    Uld,
    Kl,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [LossMode::Pkl, LossMode::Hkl, LossMode::Gold, LossMode::Uld, LossMode::Kl];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Pkl => "pkl",
            LossMode::Hkl => "hkl",
            LossMode::Gold => "gold",
            LossMode::Uld => "uld",
            LossMode::Kl => "kl",
        }
    }

    pub fn needs_projection(self) -> bool {
        matches!(self, LossMode::Pkl | LossMode::Hkl)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s) || m.as_str().replace('_', "-") == s.to_ascii_lowercase())
            .or_else(|| match s.to_ascii_lowercase().as_str() {
                "p-kl" => Some(LossMode::Pkl),
                "h-kl" => Some(LossMode::Hkl),
                _ => None,
            })
            .ok_or_else(|| {
                Error::InvalidConfig(format!("unknown loss mode {s:?} (expected pkl, hkl, gold, uld or kl)"))
            })
    }
}

/// Numeric knobs shared by every loss mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    /// Added inside logarithms only.
    pub log_floor: f64,
    pub hybrid: HybridWeights,
    /// Teacher support size per chunk.
    pub top_k: usize,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings { log_floor: DEFAULT_LOG_FLOOR, hybrid: HybridWeights::default(), top_k: DEFAULT_TOP_K }
    }
}

impl LossSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_floor >= 0.0 && self.log_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!("log floor must be finite and >= 0, got {}", self.log_floor)));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top-k must be at least 1".into()));
        }
        self.hybrid.validate()
    }
}

/// Value and gradients of one chunk's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkLoss {
    pub value: f64,
    /// `dL/dp_s` over the student vocabulary.
    pub grad_p_s: Vec<f64>,
    /// `dL/dW` per stored entry, for the projection modes.
    pub grad_w: Option<Vec<f64>>,
}

/// Everything one teacher's loss needs besides the two distributions.
#[derive(Clone, Debug)]
pub struct LossContext<'a> {
    mode: LossMode,
    settings: LossSettings,
    projection: Option<&'a SparseProjection>,
    common: Option<CommonSet>,
    n_student: usize,
    n_teacher: usize,
}

impl<'a> LossContext<'a> {
    /// Validates the mode against the vocabularies and precomputes the
    /// common set (exact for GOLD/ULD, widened by `projection` for H-KL).
    pub fn new(
        mode: LossMode,
        vs: &Vocabulary,
        vt: &Vocabulary,
        projection: Option<&'a SparseProjection>,
        settings: LossSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if let Some(w) = projection {
            if w.student_size() != vs.len() || w.teacher_size() != vt.len() {
                return Err(Error::ShapeMismatch(format!(
                    "projection is {}x{}, vocabularies are {}x{}",
                    w.student_size(),
                    w.teacher_size(),
                    vs.len(),
                    vt.len()
                )));
            }
        }
        let common = match mode {
            LossMode::Gold | LossMode::Uld => Some(build_common_set_exact(vs, vt)),
            LossMode::Hkl => {
                let w = projection.ok_or_else(|| Error::MissingProjection(mode.to_string()))?;
                Some(build_common_set_relaxed(w))
            }
            LossMode::Pkl => {
                projection.ok_or_else(|| Error::MissingProjection(mode.to_string()))?;
                None
            }
            LossMode::Kl => {
                if vs != vt {
                    return Err(Error::InvalidConfig(
                        "mode kl needs the teacher to share the student vocabulary".into(),
                    ));
                }
                None
            }
        };
        Ok(LossContext { mode, settings, projection, common, n_student: vs.len(), n_teacher: vt.len() })
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn common_set(&self) -> Option<&CommonSet> {
        self.common.as_ref()
    }

    /// Evaluates one chunk. The teacher distribution is first cut to its
    /// top-k support; in KL mode the student is cut to the same support, in
    /// P-KL mode the projected student is.
    pub fn evaluate(&self, p_t: &[f64], p_s: &[f64]) -> Result<ChunkLoss> {
        check_len(p_t, self.n_teacher, "teacher distribution")?;
        check_len(p_s, self.n_student, "student distribution")?;
        let floor = self.settings.log_floor;
        let support = (self.settings.top_k < self.n_teacher).then(|| topk_support(p_t, self.settings.top_k));
        let pt = match &support {
            Some(sup) => restrict_renormalize(p_t, sup)?,
            None => p_t.to_vec(),
        };
        let hw = &self.settings.hybrid;
        let common = || self.common.as_ref().expect("common set built for hybrid modes");
        let projection = || self.projection.expect("projection checked at construction");

        let out = match self.mode {
            LossMode::Kl => {
                let ps = match &support {
                    Some(sup) => restrict_renormalize(p_s, sup)?,
                    None => p_s.to_vec(),
                };
                let value = kl_divergence(&pt, &ps, floor)?;
                let grad = kl_divergence_grad_q(&pt, &ps, floor);
                let grad_p_s = match &support {
                    Some(sup) => restrict_renormalize_backward(p_s, sup, &grad),
                    None => grad,
                };
                ChunkLoss { value, grad_p_s, grad_w: None }
            }
            LossMode::Pkl => {
                let w = projection();
                let value = pkl(&pt, p_s, w, floor, support.as_deref())?;
                let (grad_p_s, grad_w) = pkl_grad_probs(&pt, p_s, w, floor, support.as_deref())?;
                ChunkLoss { value, grad_p_s, grad_w: Some(grad_w) }
            }
            LossMode::Gold | LossMode::Hkl => ChunkLoss {
                value: gold(&pt, p_s, common(), hw, floor)?,
                grad_p_s: gold_grad_probs(&pt, p_s, common(), hw, floor)?,
                grad_w: None,
            },
            LossMode::Uld => ChunkLoss {
                value: uld(&pt, p_s, common())?,
                grad_p_s: uld_grad_probs(&pt, p_s, common())?,
                grad_w: None,
            },
        };
        Ok(out)
    }
}

/// One teacher's distillation loss over a batch of chunks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mode: LossMode,
    pub temperature: f64,
    pub per_chunk: Vec<f64>,
    /// `tau^2` times the mean of `per_chunk`.
    pub aggregate: f64,
    /// `dL/dW` per stored projection entry (P-KL only); written separately.
    #[serde(skip)]
    pub grad_w: Option<Vec<f64>>,
}

impl LossReport {
    pub fn new(mode: LossMode, temperature: f64, per_chunk: Vec<f64>) -> Result<Self> {
        let aggregate = kd_aggregate(&per_chunk, temperature)?;
        Ok(LossReport { mode, temperature, per_chunk, aggregate, grad_w: None })
    }

    pub fn mean(&self) -> f64 {
        self.per_chunk.iter().sum::<f64>() / self.per_chunk.len() as f64
    }
}
