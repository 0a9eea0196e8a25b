use std::path::{Path, PathBuf};

use anyhow::Context;
use ctkd::chunks::{PositionLogits, Side};
use ctkd::io::write_dump;
use ctkd::projection::{build_projection, ProjectionConfig};
use ctkd::vocab::{make_toy_tokenizer, Tokenizer, ToyKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{emit, to_json_line, write_text};
use crate::Globals;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory to populate; created if missing.
    #[arg(long)]
    pub dir: PathBuf,
    /// Number of texts.
    #[arg(long, default_value_t = 6)]
    pub texts: usize,
}

const WORDS: &[&str] = &[
    "the", "model", "reads", "about", "cats", "and", "dogs", "in", "year", "page", "score", "was", "total", "of",
    "items",
];

/// Student, then teachers: name, tokenizer family, loss mode.
const TEACHERS: &[(&str, ToyKind, &str)] = &[
    ("same", ToyKind::NumeralPreserving, "kl"),
    ("digits", ToyKind::DigitSplitting, "pkl"),
    ("chars", ToyKind::CharLevel, "hkl"),
];

#[derive(Serialize)]
struct Summary {
    dir: String,
    texts: usize,
    files: Vec<String>,
}

fn random_text(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(3..=7);
    let mut words: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.gen_bool(0.3) {
            words.push(rng.gen_range(0..1000).to_string());
        } else {
            words.push(WORDS.choose(rng).expect("nonempty").to_string());
        }
    }
    words.join(" ")
}

/// Random logits that lean towards the realized token of each row.
fn random_logits(rng: &mut impl Rng, tok: &Tokenizer, ids: Vec<u32>) -> anyhow::Result<PositionLogits> {
    let v = tok.vocab().len();
    let mut raw = Vec::with_capacity(ids.len() * v);
    for &id in &ids {
        let start = raw.len();
        raw.extend((0..v).map(|_| rng.gen_range(-2.0..2.0)));
        raw[start + id as usize] += 4.0;
    }
    Ok(PositionLogits::new(v, raw, ids)?)
}

fn dump_all(
    rng: &mut impl Rng,
    dir: &Path,
    name: &str,
    side: Side,
    tok: &Tokenizer,
    texts: &[String],
) -> anyhow::Result<Vec<String>> {
    let sub = dir.join(name);
    std::fs::create_dir_all(&sub).with_context(|| format!("creating {}", sub.display()))?;
    let mut rel = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let ids = tok.encode(text)?;
        let logits = random_logits(rng, tok, ids)?;
        let file = format!("{name}/seq-{i:03}.f32");
        write_dump(dir.join(&file), &logits, &format!("text-{i}"), side, tok.vocab())?;
        rel.push(file);
    }
    Ok(rel)
}

pub fn run(args: Args, g: &Globals) -> anyhow::Result<()> {
    let dir = &args.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let texts: Vec<String> = (0..args.texts.max(1)).map(|_| random_text(&mut rng)).collect();
    let corpus: Vec<&str> = WORDS.to_vec();
    let mut files = vec!["texts.txt".to_string()];
    write_text(&dir.join("texts.txt"), &(texts.join("\n") + "\n"))?;

    let tok_s = make_toy_tokenizer(ToyKind::NumeralPreserving, &corpus);
    tok_s.vocab().save(dir.join("student.vocab.json"))?;
    files.push("student.vocab.json".into());
    let student_logits = dump_all(&mut rng, dir, "student", Side::Student, &tok_s, &texts)?;

    let mut teachers = Vec::new();
    for &(name, kind, mode) in TEACHERS {
        let tok = make_toy_tokenizer(kind, &corpus);
        let vocab_file = format!("{name}.vocab.json");
        tok.vocab().save(dir.join(&vocab_file))?;
        files.push(vocab_file.clone());
        let logits = dump_all(&mut rng, dir, name, Side::Teacher, &tok, &texts)?;
        let mut entry = json!({ "name": name, "vocab": vocab_file, "logits": logits, "mode": mode });
        if mode != "kl" {
            let w = build_projection(tok_s.vocab(), tok.vocab(), &tok, &ProjectionConfig::default())?;
            let w_file = format!("{name}.w.jsonl");
            w.save(dir.join(&w_file))?;
            files.push(w_file.clone());
            entry["projection"] = json!(w_file);
        }
        teachers.push(entry);
    }
    let weights = [0.2, 0.5, 0.3];
    for (t, w) in teachers.iter_mut().zip(weights) {
        t["weight"] = json!(w);
    }

    let config = json!({
        "build-w": { "student_vocab": "student.vocab.json", "teacher_vocab": "digits.vocab.json", "out": "digits.w.jsonl" },
        "align": { "student_vocab": "student.vocab.json", "teacher_vocab": "digits.vocab.json", "input": "texts.txt" },
        "audit": { "student_vocab": "student.vocab.json", "teacher_vocab": "digits.vocab.json" },
        "loss": {
            "student": { "vocab": "student.vocab.json", "logits": student_logits },
            "teachers": teachers,
            "step": { "temperature": 2.0 }
        }
    });
    write_text(&dir.join("config.json"), &to_json_line(&config))?;
    files.push("config.json".into());

    let summary = Summary { dir: dir.display().to_string(), texts: texts.len(), files };
    emit(&summary, g.format, |s| format!("wrote {} texts and {} files to {}\n", s.texts, s.files.len(), s.dir), None)
}
