//! Sparse student → teacher vocabulary projection.
//!
//! Row `s` of the projection distributes a student token's probability mass
//! over teacher tokens. Rows come from two rule passes: an exact canonical
//! match (a single entry of weight 1), or, failing that, the teacher-side
//! re-tokenization of the student token's text with exponentially decaying
//! weights over the resulting sub-tokens.

mod file;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::check_distribution;
use crate::vocab::{TokenId, TokenKey, Tokenizer, Vocabulary};
use crate::{Error, Result};

/// Below this total mass a projected vector is considered unusable.
pub const MIN_PROJECTED_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub beta: f64,
    pub gamma: f64,
    pub max_span: usize,
    pub top_k: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { beta: 0.9, gamma: 0.1, max_span: 4, top_k: 4 }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok =
            0.0 < self.gamma && self.gamma < self.beta && self.beta <= 1.0 && self.top_k >= 1 && self.max_span >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "projection config needs 0 < gamma < beta <= 1, top_k >= 1, max_span >= 1; got {self:?}"
            )))
        }
    }
}

/// Normalized decay weights `beta * gamma^i / sum_j beta * gamma^j` for
/// `i in 0..length`.
pub fn decay_weights(length: usize, beta: f64, gamma: f64) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::ZeroLength);
    }
    let raw: Vec<f64> = (0..length).map(|i| beta * gamma.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// How a row was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    MultiToken,
    Empty,
}

/// Row-compressed `|V_S| x |V_T|` matrix with non-negative entries.
///
/// Entries within a row are stored by descending weight, ties by ascending
/// teacher id. Entry indices (positions in storage order) address the
/// gradient returned by [`SparseProjection::apply_w_gradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct SparseProjection {
    n_teacher: usize,
    config: ProjectionConfig,
    row_ptr: Vec<usize>,
    cols: Vec<TokenId>,
    weights: Vec<f64>,
    provenance: Vec<Provenance>,
}

/// Row-provenance histogram and the mass dropped by top-k truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub student_size: usize,
    pub teacher_size: usize,
    pub exact: usize,
    pub multi_token: usize,
    pub empty: usize,
    pub truncated_rows: usize,
    pub total_dropped_mass: f64,
    pub max_dropped_mass: f64,
}

impl SparseProjection {
    /// Assembles a projection from explicit rows.
    pub fn from_rows(
        n_teacher: usize,
        rows: Vec<(Vec<(TokenId, f64)>, Provenance)>,
        config: ProjectionConfig,
    ) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut provenance = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        for (s, (mut entries, prov)) in rows.into_iter().enumerate() {
            for &(t, w) in &entries {
                if t as usize >= n_teacher {
                    return Err(Error::InvalidId { id: t, size: n_teacher });
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::InvalidConfig(format!("row {s}: weight {w} for teacher {t} is not positive")));
                }
            }
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            if entries.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::InvalidConfig(format!("row {s}: repeated teacher id")));
            }
            let prov = if entries.is_empty() { Provenance::Empty } else { prov };
            cols.extend(entries.iter().map(|e| e.0));
            weights.extend(entries.iter().map(|e| e.1));
            row_ptr.push(cols.len());
            provenance.push(prov);
        }
        Ok(SparseProjection { n_teacher, config, row_ptr, cols, weights, provenance })
    }

    pub fn student_size(&self) -> usize {
        self.provenance.len()
    }

    pub fn teacher_size(&self) -> usize {
        self.n_teacher
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn provenance(&self, s: TokenId) -> Provenance {
        self.provenance[s as usize]
    }

    /// Storage range of row `s`.
    pub fn entry_range(&self, s: TokenId) -> std::ops::Range<usize> {
        self.row_ptr[s as usize]..self.row_ptr[s as usize + 1]
    }

    pub fn row(&self, s: TokenId) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entry_range(s).map(move |e| (self.cols[e], self.weights[e]))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Teacher id of each stored entry.
    pub fn columns(&self) -> &[TokenId] {
        &self.cols
    }

    /// Overwrites one stored weight. The sparsity pattern and storage order
    /// are fixed; this is the hook for external refinement of the weights.
    pub fn set_weight(&mut self, entry: usize, weight: f64) {
        self.weights[entry] = weight;
    }

    /// Largest-weight entry of row `s`; ties go to the smaller teacher id.
    pub fn top1(&self, s: TokenId) -> Option<(TokenId, f64)> {
        self.row(s).fold(None, |best, (t, w)| match best {
            Some((bt, bw)) if bw > w || (bw == w && bt < t) => Some((bt, bw)),
            _ => Some((t, w)),
        })
    }

    fn check_student_vector(&self, p_s: &[f64]) -> Result<()> {
        if p_s.len() != self.student_size() {
            return Err(Error::ShapeMismatch(format!(
                "student vector has {} entries, projection has {} rows",
                p_s.len(),
                self.student_size()
            )));
        }
        Ok(())
    }

    /// `W^T p_s` without renormalization.
    pub fn project_raw(&self, p_s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_teacher];
        for (s, &mass) in p_s.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for e in self.entry_range(s as TokenId) {
                out[self.cols[e] as usize] += self.weights[e] * mass;
            }
        }
        out
    }

    /// `W^T p_s` renormalized over the teacher vocabulary.
    ///
    /// Renormalization compensates for mass lost to truncated entries and to
    /// empty rows.
    pub fn project(&self, p_s: &[f64]) -> Result<Vec<f64>> {
        self.check_student_vector(p_s)?;
        check_distribution(p_s, 1e-9)?;
        let mut raw = self.project_raw(p_s);
        let total: f64 = raw.iter().sum();
        if total < MIN_PROJECTED_MASS {
            return Err(Error::UnusableProjection(total));
        }
        raw.iter_mut().for_each(|v| *v /= total);
        Ok(raw)
    }

    /// `W^T p_s` restricted to `support` and renormalized there; zero
    /// elsewhere.
    pub fn project_on_support(&self, p_s: &[f64], support: &[TokenId]) -> Result<Vec<f64>> {
        self.check_student_vector(p_s)?;
        let raw = self.project_raw(p_s);
        let mass: f64 = support.iter().map(|&t| raw[t as usize]).sum();
        if mass < MIN_PROJECTED_MASS {
            return Err(Error::DegenerateSupport(mass));
        }
        let mut out = vec![0.0; self.n_teacher];
        for &t in support {
            out[t as usize] = raw[t as usize] / mass;
        }
        Ok(out)
    }

    /// Gradient of `<upstream, project(p_s)>` with respect to every stored
    /// weight, differentiating through the renormalization.
    pub fn apply_w_gradient(&self, p_s: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pullback(p_s, upstream, None)?.1)
    }

    /// Reverse pass through `f = restrict_S(W^T p_s) / sum_S(W^T p_s)`.
    ///
    /// Returns `(dL/dp_s, dL/dW_entries)` given `dL/df`. With no support the
    /// whole teacher vocabulary is used. A zero total yields zero gradients.
    pub fn pullback(&self, p_s: &[f64], grad_f: &[f64], support: Option<&[TokenId]>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_student_vector(p_s)?;
        if grad_f.len() != self.n_teacher {
            return Err(Error::ShapeMismatch(format!(
                "upstream has {} entries, teacher vocabulary has {}",
                grad_f.len(),
                self.n_teacher
            )));
        }
        let raw = self.project_raw(p_s);
        let in_support: Vec<bool> = match support {
            Some(sup) => {
                let mut mask = vec![false; self.n_teacher];
                sup.iter().for_each(|&t| mask[t as usize] = true);
                mask
            }
            None => vec![true; self.n_teacher],
        };
        let total: f64 = raw.iter().zip(&in_support).filter(|(_, &m)| m).map(|(r, _)| r).sum();
        if total == 0.0 {
            return Ok((vec![0.0; p_s.len()], vec![0.0; self.nnz()]));
        }
        let dot: f64 =
            raw.iter().zip(grad_f).zip(&in_support).filter(|(_, &m)| m).map(|((r, g), _)| g * r / total).sum();
        let grad_raw: Vec<f64> =
            grad_f.iter().zip(&in_support).map(|(g, &m)| if m { (g - dot) / total } else { 0.0 }).collect();

        let mut grad_p = vec![0.0; p_s.len()];
        let mut grad_w = vec![0.0; self.nnz()];
        for s in 0..p_s.len() {
            for e in self.entry_range(s as TokenId) {
                let g = grad_raw[self.cols[e] as usize];
                grad_p[s] += self.weights[e] * g;
                grad_w[e] = p_s[s] * g;
            }
        }
        Ok((grad_p, grad_w))
    }

    pub fn summary(&self) -> ProjectionSummary {
        let mut summary = ProjectionSummary {
            student_size: self.student_size(),
            teacher_size: self.n_teacher,
            exact: 0,
            multi_token: 0,
            empty: 0,
            truncated_rows: 0,
            total_dropped_mass: 0.0,
            max_dropped_mass: 0.0,
        };
        for s in 0..self.student_size() as TokenId {
            match self.provenance(s) {
                Provenance::Exact => summary.exact += 1,
                Provenance::Empty => summary.empty += 1,
                Provenance::MultiToken => {
                    summary.multi_token += 1;
                    let dropped = (1.0 - self.row(s).map(|(_, w)| w).sum::<f64>()).max(0.0);
                    if dropped > 1e-15 {
                        summary.truncated_rows += 1;
                        summary.total_dropped_mass += dropped;
                        summary.max_dropped_mass = summary.max_dropped_mass.max(dropped);
                    }
                }
            }
        }
        summary
    }
}

/// Builds the rule-based projection.
///
/// Pass 1 gives every student token whose canonical form equals a teacher
/// token's canonical form a single entry of weight 1 (smallest teacher id on
/// collisions; specials match through shared roles only). Pass 2 re-tokenizes
/// each remaining token's text with `tok_t`; a result of length
/// `1..=max_span` receives [`decay_weights`], repeated sub-tokens are summed,
/// and the row is then truncated to `top_k`. Anything else stays empty.
pub fn build_projection(
    vs: &Vocabulary,
    vt: &Vocabulary,
    tok_t: &Tokenizer,
    cfg: &ProjectionConfig,
) -> Result<SparseProjection> {
    cfg.validate()?;
    if tok_t.vocab() != vt {
        return Err(Error::ShapeMismatch("teacher tokenizer does not use the teacher vocabulary".into()));
    }
    let text_index = vt.canonical_index();
    let decay = (1..=cfg.max_span).map(|len| decay_weights(len, cfg.beta, cfg.gamma)).collect::<Result<Vec<_>>>()?;

    let rows: Vec<(Vec<(TokenId, f64)>, Provenance)> = (0..vs.len() as TokenId)
        .into_par_iter()
        .map(|s| match vs.key(s) {
            TokenKey::Special(role) => match role.and_then(|r| vt.special_roles().get(r)) {
                Some(&t) => (vec![(t, 1.0)], Provenance::Exact),
                None => (Vec::new(), Provenance::Empty),
            },
            TokenKey::Text(text) => {
                if let Some(&t) = text_index.get(text) {
                    return (vec![(t, 1.0)], Provenance::Exact);
                }
                match tok_t.encode_bytes(text) {
                    Ok(pieces) if !pieces.is_empty() && pieces.len() <= cfg.max_span => {
                        let mut merged: BTreeMap<TokenId, f64> = BTreeMap::new();
                        for (&t, &w) in pieces.iter().zip(&decay[pieces.len() - 1]) {
                            *merged.entry(t).or_insert(0.0) += w;
                        }
                        let mut entries: Vec<(TokenId, f64)> = merged.into_iter().collect();
                        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                        entries.truncate(cfg.top_k);
                        (entries, Provenance::MultiToken)
                    }
                    _ => (Vec::new(), Provenance::Empty),
                }
            }
        })
        .collect();
    SparseProjection::from_rows(vt.len(), rows, *cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{make_toy_tokenizer, ToyKind};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn decay_weight_tuples() {
        let w2 = decay_weights(2, 0.9, 0.1).unwrap();
        assert!(close(w2[0], 0.909, 1e-3) && close(w2[1], 0.091, 1e-3));
        let w3 = decay_weights(3, 0.9, 0.1).unwrap();
        for (a, b) in w3.iter().zip([0.9009, 0.0901, 0.0090]) {
            assert!(close(*a, b, 1e-4), "{w3:?}");
        }
        let w4 = decay_weights(4, 0.9, 0.1).unwrap();
        for (a, b) in w4.iter().zip([0.9000, 0.0900, 0.0090, 0.0009]) {
            assert!(close(*a, b, 1e-4), "{w4:?}");
        }
        assert_eq!(decay_weights(1, 0.9, 0.1).unwrap(), vec![1.0]);
        for len in 1..10 {
            let sum: f64 = decay_weights(len, 0.9, 0.1).unwrap().iter().sum();
            assert!(close(sum, 1.0, 1e-15));
        }
        assert!(matches!(decay_weights(0, 0.9, 0.1), Err(Error::ZeroLength)));
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::default().validate().is_ok());
        assert!(ProjectionConfig { gamma: 0.95, ..Default::default() }.validate().is_err());
        assert!(ProjectionConfig { beta: 1.1, ..Default::default() }.validate().is_err());
        assert!(ProjectionConfig { top_k: 0, ..Default::default() }.validate().is_err());
    }

    fn digit_pair() -> (Tokenizer, Tokenizer, SparseProjection) {
        let tok_s = make_toy_tokenizer(ToyKind::NumeralPreserving, &[]);
        let tok_t = make_toy_tokenizer(ToyKind::DigitSplitting, &[]);
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        (tok_s, tok_t, w)
    }

    #[test]
    fn numeral_row_decays_over_digits() {
        let (tok_s, tok_t, w) = digit_pair();
        let s = tok_s.vocab().id_of("201").unwrap();
        assert_eq!(w.provenance(s), Provenance::MultiToken);
        let row: Vec<_> = w.row(s).collect();
        let expect = [("2", 0.9009), ("0", 0.0901), ("1", 0.0090)];
        assert_eq!(row.len(), 3);
        for ((t, wt), (tok, v)) in row.iter().zip(expect) {
            assert_eq!(tok_t.vocab().token(*t), tok);
            assert!(close(*wt, v, 1e-4));
        }
        let (t, wt) = w.top1(s).unwrap();
        assert_eq!(tok_t.vocab().token(t), "2");
        assert!(close(wt, 0.9009, 1e-4));
    }

    #[test]
    fn exact_match_row() {
        let tok_s = make_toy_tokenizer(ToyKind::WordLevel, &["the"]);
        let tok_t = make_toy_tokenizer(ToyKind::WordLevel, &["the cat"]);
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        let s = tok_s.vocab().id_of(" the").unwrap();
        assert_eq!(w.provenance(s), Provenance::Exact);
        let row: Vec<_> = w.row(s).collect();
        assert_eq!(row, vec![(tok_t.vocab().id_of(" the").unwrap(), 1.0)]);
    }

    #[test]
    fn span_bound_leaves_row_empty() {
        let tok_s = make_toy_tokenizer(ToyKind::WordLevel, &["hello"]);
        let tok_t = make_toy_tokenizer(ToyKind::CharLevel, &[]);
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        let s = tok_s.vocab().id_of("hello").unwrap();
        assert_eq!(w.provenance(s), Provenance::Empty);
        assert!(w.top1(s).is_none());
        // " hell" is not in the vocab but "hell" would be 4 chars; check a 4-char word.
        let tok_s = make_toy_tokenizer(ToyKind::WordLevel, &["hell"]);
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        assert_eq!(w.provenance(tok_s.vocab().id_of("hell").unwrap()), Provenance::MultiToken);
    }

    #[test]
    fn repeated_sub_tokens_are_summed() {
        let tok_s = make_toy_tokenizer(ToyKind::WordLevel, &["aa"]);
        let tok_t = make_toy_tokenizer(ToyKind::CharLevel, &[]);
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        let row: Vec<_> = w.row(tok_s.vocab().id_of("aa").unwrap()).collect();
        assert_eq!(row.len(), 1);
        assert!(close(row[0].1, 1.0, 1e-15));
    }

    #[test]
    fn truncation_keeps_largest_and_reports_dropped_mass() {
        let tok_s = make_toy_tokenizer(ToyKind::WordLevel, &["abcd"]);
        let tok_t = make_toy_tokenizer(ToyKind::CharLevel, &[]);
        let cfg = ProjectionConfig { top_k: 2, ..Default::default() };
        let w = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &cfg).unwrap();
        let s = tok_s.vocab().id_of("abcd").unwrap();
        let row: Vec<_> = w.row(s).collect();
        assert_eq!(row.len(), 2);
        assert!(close(row[0].1, 0.9, 1e-4) && close(row[1].1, 0.09, 1e-4));
        let summary = w.summary();
        assert!(summary.truncated_rows >= 1);
        assert!(close(summary.max_dropped_mass, 0.0099, 1e-4));
        // Truncation does not move the top entry.
        let full = build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap();
        assert_eq!(full.top1(s), w.top1(s));
    }

    #[test]
    fn identity_projection_is_identity() {
        let tok = make_toy_tokenizer(ToyKind::CharLevel, &[]);
        let w = build_projection(tok.vocab(), tok.vocab(), &tok, &ProjectionConfig::default()).unwrap();
        let n = tok.vocab().len();
        let mut p = vec![0.0; n];
        p[65] = 0.25;
        p[66] = 0.75;
        // Specials without roles have empty rows and carry no mass here.
        assert_eq!(w.project(&p).unwrap(), p);
    }

    #[test]
    fn projection_errors() {
        let rows = vec![(vec![(0, 1.0)], Provenance::Exact), (vec![], Provenance::Empty)];
        let w = SparseProjection::from_rows(1, rows, ProjectionConfig::default()).unwrap();
        assert!(matches!(w.project(&[0.0, 1.0]), Err(Error::UnusableProjection(_))));
        assert!(matches!(w.project(&[0.5, 0.4]), Err(Error::NotADistribution(_))));
        assert!(matches!(w.project(&[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn top1_tie_goes_to_smaller_teacher_id() {
        let rows = vec![(vec![(3, 0.5), (1, 0.5)], Provenance::MultiToken)];
        let w = SparseProjection::from_rows(4, rows, ProjectionConfig::default()).unwrap();
        assert_eq!(w.top1(0), Some((1, 0.5)));
    }

    #[test]
    fn zero_upstream_or_zero_input_gives_zero_gradient() {
        let (_, _, w) = digit_pair();
        let mut p = vec![0.0; w.student_size()];
        p[10] = 1.0;
        let g = w.apply_w_gradient(&p, &vec![0.0; w.teacher_size()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = w.apply_w_gradient(&vec![0.0; w.student_size()], &vec![1.0; w.teacher_size()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
