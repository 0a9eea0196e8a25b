use std::fmt::Write as _;

use ctkd::projection::{build_projection, ProjectionConfig, ProjectionSummary};
use ctkd::vocab::Tokenizer;
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
    /// Projection file to write.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_span: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

impl Args {
    pub fn projection_config(&self) -> ProjectionConfig {
        let d = ProjectionConfig::default();
        ProjectionConfig {
            beta: self.beta.unwrap_or(d.beta),
            gamma: self.gamma.unwrap_or(d.gamma),
            max_span: self.max_span.unwrap_or(d.max_span),
            top_k: self.top_k.unwrap_or(d.top_k),
        }
    }
}

#[derive(Serialize)]
struct Summary {
    out: String,
    content_hash: String,
    nnz: usize,
    config: ProjectionConfig,
    #[serde(flatten)]
    rows: ProjectionSummary,
}

pub fn run(args: Args, g: &Globals) -> anyhow::Result<()> {
    let args = merge(&args, g.config.as_ref(), "build-w", &["student_vocab", "teacher_vocab", "out"])?;
    let cfg = args.projection_config();
    cfg.validate()?;
    let out = required(&args.out, "out")?;
    let vs = load_vocab(&required(&args.student_vocab, "student-vocab")?)?;
    let vt = load_vocab(&required(&args.teacher_vocab, "teacher-vocab")?)?;
    let tok_t = Tokenizer::greedy(vt.clone());
    let w = build_projection(&vs, &vt, &tok_t, &cfg)?;
    w.save(&out)?;
    let summary = Summary { out, content_hash: w.content_hash(), nnz: w.nnz(), config: cfg, rows: w.summary() };
    emit(&summary, g.format, render, None)
}

fn render(s: &Summary) -> String {
    let r = &s.rows;
    let pct = |n: usize| if r.student_size == 0 { 0.0 } else { 100.0 * n as f64 / r.student_size as f64 };
    let mut t = String::new();
    let _ = writeln!(t, "wrote {} ({} x {}, {} entries)", s.out, r.student_size, r.teacher_size, s.nnz);
    let _ = writeln!(t, "  exact        {:>8}  {:5.1}%", r.exact, pct(r.exact));
    let _ = writeln!(t, "  multi_token  {:>8}  {:5.1}%", r.multi_token, pct(r.multi_token));
    let _ = writeln!(t, "  empty        {:>8}  {:5.1}%", r.empty, pct(r.empty));
    let _ = writeln!(
        t,
        "  truncated rows {}, dropped mass total {:.6}, max {:.6}",
        r.truncated_rows, r.total_dropped_mass, r.max_dropped_mass
    );
    let _ = writeln!(t, "  content hash {}", s.content_hash);
    t
}
