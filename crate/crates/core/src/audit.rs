//! Coverage of token categories by the common set, and the loss mode it
//! suggests.

use std::fmt::Write as _;

use rayon::prelude::*;
use regex::bytes::Regex;
use serde::{Deserialize, Serialize};

use crate::losses::{CommonSet, LossMode};
use crate::vocab::{TokenId, Vocabulary};
use crate::{Error, Result};

/// A named category of tokens: those whose canonical form matches `pattern`
/// (a byte regex; anchor it for whole-token matches). Specials never belong
/// to a category.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryRule {
    pub name: String,
    pub pattern: String,
}

impl CategoryRule {
    pub fn new(name: &str, pattern: &str) -> Self {
        CategoryRule { name: name.to_string(), pattern: pattern.to_string() }
    }

    fn compile(&self) -> Result<Regex> {
        Regex::new(&self.pattern)
            .map_err(|e| Error::InvalidConfig(format!("category {:?}: bad pattern: {e}", self.name)))
    }
}

/// The six default categories. They are mutually exclusive; numerals and
/// words may carry one leading space.
pub fn default_rules() -> Vec<CategoryRule> {
    vec![
        CategoryRule::new("1-digit", r"^ ?[0-9]$"),
        CategoryRule::new("2-digit", r"^ ?[0-9]{2}$"),
        CategoryRule::new("3-digit", r"^ ?[0-9]{3}$"),
        CategoryRule::new("ascii-punct", r"^ ?[!-/:-@\[-`{-~]+$"),
        CategoryRule::new("alphabetic", r"^ ?[A-Za-z]+$"),
        CategoryRule::new("non-ascii", r"(?-u)[\x80-\xFF]"),
    ]
}

/// Categories whose loss of coverage selects P-KL by default.
pub fn default_critical() -> Vec<String> {
    vec!["2-digit".to_string(), "3-digit".to_string()]
}

pub const DEFAULT_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub category: String,
    pub matched: usize,
    pub size: usize,
    /// `matched / size`; absent for an empty category.
    pub fraction: Option<f64>,
}

/// For each rule, the student tokens in the category and how many of them
/// have a partner in `c`.
pub fn audit_coverage(vs: &Vocabulary, c: &CommonSet, rules: &[CategoryRule]) -> Result<Vec<CoverageRow>> {
    if rules.is_empty() {
        return Err(Error::InvalidConfig("no coverage categories given".into()));
    }
    let compiled = rules.iter().map(CategoryRule::compile).collect::<Result<Vec<_>>>()?;
    let rows = rules
        .par_iter()
        .zip(compiled.par_iter())
        .map(|(rule, re)| {
            let mut row = CoverageRow { category: rule.name.clone(), matched: 0, size: 0, fraction: None };
            for id in 0..vs.len() as TokenId {
                if vs.is_special(id) || !re.is_match(vs.canonical(id).as_bytes()) {
                    continue;
                }
                row.size += 1;
                if c.contains_student(id) {
                    row.matched += 1;
                }
            }
            row.fraction = (row.size > 0).then(|| row.matched as f64 / row.size as f64);
            row
        })
        .collect();
    Ok(rows)
}

/// P-KL if any critical category's coverage is below `threshold`,
/// otherwise H-KL. Empty categories never trigger P-KL.
pub fn recommend_mode(coverage: &[CoverageRow], critical: &[String], threshold: f64) -> Result<LossMode> {
    let mut pkl = false;
    for name in critical {
        let row = coverage.iter().find(|r| &r.category == name).ok_or_else(|| Error::UnknownCategory(name.clone()))?;
        if row.fraction.is_some_and(|f| f < threshold) {
            pkl = true;
        }
    }
    Ok(if pkl { LossMode::Pkl } else { LossMode::Hkl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<CoverageRow>,
    pub common_pairs: usize,
    pub critical: Vec<String>,
    pub threshold: f64,
    pub recommendation: LossMode,
}

impl AuditReport {
    pub fn build(
        vs: &Vocabulary,
        c: &CommonSet,
        rules: &[CategoryRule],
        critical: &[String],
        threshold: f64,
    ) -> Result<Self> {
        let rows = audit_coverage(vs, c, rules)?;
        let recommendation = recommend_mode(&rows, critical, threshold)?;
        Ok(AuditReport { rows, common_pairs: c.len(), critical: critical.to_vec(), threshold, recommendation })
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.category.len()).max().unwrap_or(0).max("category".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "category", "matched", "size", "coverage");
        for r in &self.rows {
            let frac = r.fraction.map_or_else(|| "n/a".to_string(), |f| format!("{:.1}%", 100.0 * f));
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", r.category, r.matched, r.size, frac);
        }
        let _ = writeln!(out, "common pairs: {}", self.common_pairs);
        let _ = writeln!(
            out,
            "recommendation: {} (critical: {}; threshold {})",
            self.recommendation,
            self.critical.join(", "),
            self.threshold
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::build_common_set_exact;
    use crate::vocab::{make_toy_tokenizer, ToyKind};

    fn row<'a>(rows: &'a [CoverageRow], name: &str) -> &'a CoverageRow {
        rows.iter().find(|r| r.category == name).unwrap()
    }

    #[test]
    fn digit_splitting_teacher_loses_numerals() {
        let s = make_toy_tokenizer(ToyKind::NumeralPreserving, &[]);
        let t = make_toy_tokenizer(ToyKind::DigitSplitting, &[]);
        let c = build_common_set_exact(s.vocab(), t.vocab());
        let rows = audit_coverage(s.vocab(), &c, &default_rules()).unwrap();
        let two = row(&rows, "2-digit");
        assert_eq!((two.matched, two.size, two.fraction), (0, 100, Some(0.0)));
        assert_eq!(row(&rows, "3-digit").size, 1000);
        assert_eq!(row(&rows, "1-digit").fraction, Some(1.0));
        assert_eq!(recommend_mode(&rows, &default_critical(), DEFAULT_THRESHOLD).unwrap(), LossMode::Pkl);
    }

    #[test]
    fn matching_teacher_keeps_numerals() {
        let s = make_toy_tokenizer(ToyKind::NumeralPreserving, &[]);
        let c = build_common_set_exact(s.vocab(), s.vocab());
        let rows = audit_coverage(s.vocab(), &c, &default_rules()).unwrap();
        let two = row(&rows, "2-digit");
        assert_eq!((two.matched, two.size), (100, 100));
        assert_eq!(recommend_mode(&rows, &default_critical(), DEFAULT_THRESHOLD).unwrap(), LossMode::Hkl);
    }

    #[test]
    fn empty_category_is_not_applicable() {
        let v = Vocabulary::from_json(r#"["a","b"]"#).unwrap();
        let rows = audit_coverage(&v, &CommonSet::empty(), &default_rules()).unwrap();
        let two = row(&rows, "2-digit");
        assert_eq!((two.size, two.fraction), (0, None));
        assert_eq!(recommend_mode(&rows, &default_critical(), 1.0).unwrap(), LossMode::Hkl);
    }

    #[test]
    fn zero_threshold_always_hkl() {
        let rows = vec![CoverageRow { category: "2-digit".into(), matched: 0, size: 5, fraction: Some(0.0) }];
        assert_eq!(recommend_mode(&rows, &["2-digit".into()], 0.0).unwrap(), LossMode::Hkl);
        assert_eq!(recommend_mode(&rows, &["2-digit".into()], 0.5).unwrap(), LossMode::Pkl);
    }

    #[test]
    fn unknown_category() {
        assert!(matches!(recommend_mode(&[], &["x".into()], 1.0), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn default_rules_are_exclusive() {
        let res: Vec<Regex> = default_rules().iter().map(|r| r.compile().unwrap()).collect();
        for text in ["7", " 42", "123", "!", " ,", "...", "hello", " World", "é", "\u{4e2d}"] {
            let hits = res.iter().filter(|re| re.is_match(text.as_bytes())).count();
            assert_eq!(hits, 1, "{text:?}");
        }
        assert!(!res.iter().any(|re| re.is_match(b"a1")));
    }

    #[test]
    fn text_table_has_every_row() {
        let v = Vocabulary::from_json(r#"["1","ab"]"#).unwrap();
        let c = build_common_set_exact(&v, &v);
        let report = AuditReport::build(&v, &c, &default_rules(), &default_critical(), 1.0).unwrap();
        let text = report.to_text();
        assert_eq!(text.lines().count(), 1 + 6 + 2);
        assert!(text.contains("n/a") && text.contains("100.0%"));
    }
}
