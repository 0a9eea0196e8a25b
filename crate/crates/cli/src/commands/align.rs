use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use ctkd::align::{dp_align, trl_substring_align, AlignScoring, ChunkKind};
use ctkd::vocab::{TokenId, Tokenizer, Vocabulary};
use serde::{Deserialize, Serialize};

use super::{emit, load_vocab, write_text};
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
    /// Text file, one sequence per line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// JSON Lines chunk dump to write.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Use the incremental-decode substring baseline instead of the DP.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub baseline: bool,
    /// Prefix every student sequence with its BOS token.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub student_bos: bool,
    /// Prefix every teacher sequence with its BOS token.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub teacher_bos: bool,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_exact: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_comb: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_gap: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_span: Option<usize>,
}

impl Args {
    fn scoring(&self) -> AlignScoring {
        let d = AlignScoring::default();
        AlignScoring {
            alpha_exact: self.alpha_exact.unwrap_or(d.alpha_exact),
            alpha_comb: self.alpha_comb.unwrap_or(d.alpha_comb),
            alpha_gap: self.alpha_gap.unwrap_or(d.alpha_gap),
            max_span: self.max_span.unwrap_or(d.max_span),
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Summary {
    engine: &'static str,
    sequences: usize,
    chunks: usize,
    matches: usize,
    combinations: usize,
    groups: usize,
    super_groups: usize,
    gaps: usize,
    mismatches: usize,
    in_loss: usize,
    total_score: f64,
}

fn encode(tok: &Tokenizer, text: &str, bos: bool, side: &str) -> anyhow::Result<Vec<TokenId>> {
    let mut ids = Vec::new();
    if bos {
        ids.push(bos_id(tok.vocab()).with_context(|| format!("{side} vocabulary has no BOS token"))?);
    }
    ids.extend(tok.encode(text).with_context(|| format!("{side} tokenizer cannot encode {text:?}"))?);
    Ok(ids)
}

fn bos_id(v: &Vocabulary) -> Option<TokenId> {
    v.bos_id()
}

pub fn run(args: Args, g: &Globals) -> anyhow::Result<()> {
    let args = merge(&args, g.config.as_ref(), "align", &["student_vocab", "teacher_vocab", "input", "out"])?;
    let scoring = args.scoring();
    scoring.validate()?;
    let input = required(&args.input, "input")?;
    let tok_s = Tokenizer::greedy(load_vocab(&required(&args.student_vocab, "student-vocab")?)?);
    let tok_t = Tokenizer::greedy(load_vocab(&required(&args.teacher_vocab, "teacher-vocab")?)?);
    let text = std::fs::read_to_string(&input).with_context(|| format!("reading {input}"))?;

    let mut summary = Summary { engine: if args.baseline { "baseline" } else { "dp" }, ..Default::default() };
    let mut dump = String::new();
    for (n, line) in text.lines().enumerate() {
        let s = encode(&tok_s, line, args.student_bos, "student")?;
        let t = encode(&tok_t, line, args.teacher_bos, "teacher")?;
        let alignment = if args.baseline {
            trl_substring_align(&s, &t, &tok_s, &tok_t)?
        } else {
            dp_align(&s, &t, &scoring, &tok_s, &tok_t)?
        };
        summary.sequences += 1;
        summary.chunks += alignment.chunks.len();
        summary.matches += alignment.count(ChunkKind::Match);
        summary.combinations += alignment.count(ChunkKind::Combination);
        summary.groups += alignment.count(ChunkKind::Group);
        summary.super_groups += alignment.count(ChunkKind::SuperGroup);
        summary.gaps += alignment.count(ChunkKind::GapStudentSide) + alignment.count(ChunkKind::GapTeacherSide);
        summary.mismatches += alignment.count(ChunkKind::Mismatch);
        summary.in_loss += alignment.loss_chunks().count();
        summary.total_score += alignment.score;
        for record in alignment.records(&format!("line-{}", n + 1)) {
            dump.push_str(&serde_json::to_string(&record)?);
            dump.push('\n');
        }
    }

    match &args.out {
        Some(out) => {
            write_text(Path::new(out), &dump)?;
            emit(&summary, g.format, render, None)
        }
        None => {
            print!("{dump}");
            eprint!("{}", render(&summary));
            Ok(())
        }
    }
}

fn render(s: &Summary) -> String {
    let mut t = String::new();
    let _ =
        writeln!(t, "{} alignment of {} sequences: {} chunks ({} in loss)", s.engine, s.sequences, s.chunks, s.in_loss);
    let _ = writeln!(
        t,
        "  matches {}, combinations {}, groups {}, super-groups {}, gaps {}, mismatches {}",
        s.matches, s.combinations, s.groups, s.super_groups, s.gaps, s.mismatches
    );
    if s.engine == "dp" {
        let _ = writeln!(t, "  total score {}", s.total_score);
    }
    t
}
