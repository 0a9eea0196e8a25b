use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use ctkd::align::AlignmentCache;
use ctkd::chunks::PositionLogits;
use ctkd::gradcheck::{run_gradcheck, GradcheckReport};
use ctkd::io::{read_dump, write_f32_matrix};
use ctkd::losses::LossMode;
use ctkd::projection::SparseProjection;
use ctkd::training::{run_step, StepConfig, StepReport, TeacherInput, WeightSchedule};
use ctkd::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{emit, load_vocab};
use crate::config::ConfigFile;
use crate::Globals;

#[derive(clap::Args, Debug, Default)]
pub struct Args {
    /// Use this loss mode for every teacher.
    #[arg(long)]
    pub mode: Option<LossMode>,
    #[arg(long, allow_negative_numbers = true)]
    pub temperature: Option<f64>,
    /// Teacher top-k before the loss.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Write gradient matrices (little-endian f32) into this directory.
    #[arg(long)]
    pub grad: Option<PathBuf>,
    /// Run the finite-difference gradient checks instead of a step.
    #[arg(long)]
    pub gradcheck: bool,
    /// Instances per gradient check.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<String>,
}

/// The `loss` section of a config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    student: StudentSpec,
    teachers: Vec<TeacherSpec>,
    #[serde(default)]
    step: Option<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudentSpec {
    vocab: String,
    logits: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TeacherSpec {
    name: String,
    vocab: String,
    logits: Vec<String>,
    mode: LossMode,
    #[serde(default)]
    projection: Option<String>,
    #[serde(default)]
    weight: Option<f64>,
}

#[derive(Serialize)]
struct InputEcho {
    student_vocab_hash: String,
    sequences: usize,
    positions: usize,
    teachers: Vec<TeacherEcho>,
}

#[derive(Serialize)]
struct TeacherEcho {
    name: String,
    mode: LossMode,
    vocab_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection_hash: Option<String>,
}

#[derive(Serialize)]
struct Report {
    inputs: InputEcho,
    step: StepReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gradient_files: Vec<String>,
}

struct LoadedTeacher {
    spec: TeacherSpec,
    vocab: Vocabulary,
    projection: Option<SparseProjection>,
    sequences: Vec<PositionLogits>,
}

fn load_dumps(paths: &[String], vocab: &Vocabulary) -> anyhow::Result<Vec<PositionLogits>> {
    paths
        .iter()
        .map(|p| read_dump(p, vocab).map(|(_, logits)| logits).with_context(|| format!("loading logits {p}")))
        .collect()
}

/// Step settings: the config's `step` object, defaulting the schedule to the
/// teachers' static weights (uniform when none are given).
fn step_config(step: Option<&Value>, teachers: &[TeacherSpec], args: &Args) -> anyhow::Result<StepConfig> {
    let mut step = match step {
        Some(v) => v.clone(),
        None => Value::Object(Default::default()),
    };
    let Value::Object(map) = &mut step else { bail!("loss.step must be an object") };
    if !map.contains_key("schedule") {
        let given: Vec<Option<f64>> = teachers.iter().map(|t| t.weight).collect();
        let weights: Vec<f64> = if given.iter().all(Option::is_some) {
            given.into_iter().flatten().collect()
        } else if given.iter().all(Option::is_none) {
            vec![1.0 / teachers.len().max(1) as f64; teachers.len()]
        } else {
            bail!(ctkd::Error::InvalidConfig("either every teacher has a weight or none does".into()));
        };
        let schedule = serde_json::to_value(WeightSchedule::Static { weights })?;
        map.insert("schedule".into(), schedule);
    }
    let mut cfg: StepConfig = serde_json::from_value(step).context("invalid loss.step settings")?;
    if let Some(t) = args.temperature {
        cfg.temperature = t;
    }
    if let Some(k) = args.top_k {
        cfg.loss.top_k = k;
    }
    Ok(cfg)
}

fn rebase_all(cfg: &ConfigFile, section: &mut LossSection) {
    section.student.vocab = cfg.rebase(&section.student.vocab);
    section.student.logits.iter_mut().for_each(|p| *p = cfg.rebase(p));
    for t in &mut section.teachers {
        t.vocab = cfg.rebase(&t.vocab);
        t.logits.iter_mut().for_each(|p| *p = cfg.rebase(p));
        if let Some(p) = &mut t.projection {
            *p = cfg.rebase(p);
        }
    }
}

pub fn run(args: Args, g: &Globals) -> anyhow::Result<()> {
    if args.gradcheck {
        let report = run_gradcheck(g.seed, args.instances)?;
        return emit(&report, g.format, render_gradcheck, args.out.as_deref());
    }
    let cfg_file = g.config.as_ref().context("loss needs --config with a \"loss\" section")?;
    let raw = cfg_file.section("loss").context("config has no \"loss\" section")?;
    let mut section: LossSection = serde_json::from_value(raw.clone()).context("invalid loss settings")?;
    rebase_all(cfg_file, &mut section);
    if let Some(mode) = args.mode {
        section.teachers.iter_mut().for_each(|t| t.mode = mode);
    }
    let step_cfg = step_config(section.step.as_ref(), &section.teachers, &args)?;

    let vs = load_vocab(&section.student.vocab)?;
    let student = load_dumps(&section.student.logits, &vs)?;
    let mut loaded = Vec::new();
    for spec in section.teachers {
        let vocab = load_vocab(&spec.vocab)?;
        let sequences = load_dumps(&spec.logits, &vocab)?;
        let projection = match &spec.projection {
            Some(p) if spec.mode.needs_projection() => {
                Some(SparseProjection::load(p).with_context(|| format!("loading projection {p}"))?)
            }
            _ => None,
        };
        loaded.push(LoadedTeacher { spec, vocab, projection, sequences });
    }
    let inputs: Vec<TeacherInput<'_>> = loaded
        .iter()
        .map(|t| TeacherInput {
            name: t.spec.name.clone(),
            mode: t.spec.mode,
            vocab: &t.vocab,
            projection: t.projection.as_ref(),
            sequences: &t.sequences,
        })
        .collect();

    let cache = AlignmentCache::new();
    let step = run_step(&vs, &student, &inputs, &step_cfg, &cache, args.grad.is_some())?;

    let mut gradient_files = Vec::new();
    if let Some(dir) = &args.grad {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut write = |name: String, values: &[f64]| -> anyhow::Result<()> {
            write_f32_matrix(dir.join(&name), values)?;
            gradient_files.push(name);
            Ok(())
        };
        for (b, grad) in step.grad_student.iter().flatten().enumerate() {
            write(format!("student-{b:04}.f32"), grad)?;
        }
        for t in &step.teachers {
            if let Some(gw) = &t.loss.grad_w {
                write(format!("w-{}.f32", file_safe(&t.name)), gw)?;
            }
        }
    }

    let report = Report {
        inputs: InputEcho {
            student_vocab_hash: vs.content_hash(),
            sequences: student.len(),
            positions: student.iter().map(PositionLogits::positions).sum(),
            teachers: loaded
                .iter()
                .map(|t| TeacherEcho {
                    name: t.spec.name.clone(),
                    mode: t.spec.mode,
                    vocab_hash: t.vocab.content_hash(),
                    projection_hash: t.projection.as_ref().map(SparseProjection::content_hash),
                })
                .collect(),
        },
        step,
        gradient_files,
    };
    emit(&report, g.format, render, args.out.as_deref())
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn render(r: &Report) -> String {
    let s = &r.step;
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{} sequences, {} student positions, tau {}",
        r.inputs.sequences, r.inputs.positions, s.config.temperature
    );
    for teacher in &s.teachers {
        let _ = writeln!(
            t,
            "  {:<12} {:<4} alpha {:.6}  chunks {:>5}  gaps {:>4}  mismatches {:>4}  mean {:.9}",
            teacher.name,
            teacher.loss.mode,
            teacher.alpha,
            teacher.loss_chunks,
            teacher.gap_chunks,
            teacher.mismatch_chunks,
            teacher.loss.mean()
        );
    }
    let _ = writeln!(t, "kd {:.9}  ce {:.9}  total {:.9}", s.kd_loss, s.ce_loss, s.total);
    let _ = writeln!(t, "multipliers: kd {:.9}, ce {:.9}", s.kd_multiplier, s.ce_multiplier);
    if s.kd_scaling_skipped {
        let _ = writeln!(t, "KD term is zero; dynamic scaling skipped");
    }
    for f in &r.gradient_files {
        let _ = writeln!(t, "wrote {f}");
    }
    t
}

fn render_gradcheck(r: &GradcheckReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "finite differences, step {:e}, seed {}", r.step, r.seed);
    for c in &r.checks {
        let _ = writeln!(
            t,
            "  {:<22} {:>5} instances {:>7} entries  max rel error {:.3e}",
            c.name, c.instances, c.entries, c.max_rel_error
        );
    }
    let _ = writeln!(t, "max rel error {:.3e}", r.max_rel_error);
    t
}
