use ctkd::audit::{default_critical, default_rules, AuditReport, CategoryRule, DEFAULT_THRESHOLD};
use ctkd::losses::build_common_set_exact;
use serde::{Deserialize, Serialize};

use super::{emit, load_vocab};
use crate::config::{merge, required};
use crate::Globals;

#[derive(clap::Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student_vocab: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_vocab: Option<String>,
    /// Critical category names, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical: Option<Vec<String>>,
    /// Coverage below this fraction in a critical category selects P-KL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Category rules (config file only).
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<CategoryRule>>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

pub fn run(args: Args, g: &Globals) -> anyhow::Result<()> {
    let args = merge(&args, g.config.as_ref(), "audit", &["student_vocab", "teacher_vocab", "out"])?;
    let vs = load_vocab(&required(&args.student_vocab, "student-vocab")?)?;
    let vt = load_vocab(&required(&args.teacher_vocab, "teacher-vocab")?)?;
    let rules = args.rules.clone().unwrap_or_else(default_rules);
    let critical = args.critical.clone().unwrap_or_else(default_critical);
    let threshold = args.threshold.unwrap_or(DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        anyhow::bail!(ctkd::Error::InvalidConfig(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let common = build_common_set_exact(&vs, &vt);
    let report = AuditReport::build(&vs, &common, &rules, &critical, threshold)?;
    emit(&report, g.format, AuditReport::to_text, args.out.as_deref())
}
