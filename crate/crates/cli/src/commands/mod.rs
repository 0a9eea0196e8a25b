pub mod align;
pub mod audit;
pub mod build_w;
pub mod fixture;
pub mod loss;

use std::path::Path;

use anyhow::Context;
use ctkd::vocab::Vocabulary;
use serde::Serialize;

use crate::Format;

pub fn load_vocab(path: &str) -> anyhow::Result<Vocabulary> {
    Ok(Vocabulary::load(path)?)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

/// Prints a report as JSON or as the given text rendering, or writes it to
/// `out` when set.
pub fn emit<T: Serialize>(
    value: &T,
    format: Format,
    text: impl FnOnce(&T) -> String,
    out: Option<&str>,
) -> anyhow::Result<()> {
    let body = match format {
        Format::Json => to_json_line(value),
        Format::Text => text(value),
    };
    match out {
        Some(path) => write_text(Path::new(path), &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
