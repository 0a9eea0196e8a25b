//! Logits dumps: a little-endian `f32` matrix `[positions x |V|]` plus a JSON
//! sidecar next to it (same path, `.json` extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chunks::{PositionLogits, Side};
use crate::vocab::{TokenId, Vocabulary};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpMeta {
    pub seq_id: String,
    pub side: Side,
    pub vocab_hash: String,
    pub realized_ids: Vec<TokenId>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a row-major `f32` matrix in little-endian order.
pub fn write_f32_matrix(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_matrix(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
}

/// Writes `logits` and its sidecar.
pub fn write_dump(
    path: impl AsRef<Path>,
    logits: &PositionLogits,
    seq_id: &str,
    side: Side,
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    if logits.vocab_size() != vocab.len() {
        return Err(Error::ShapeMismatch(format!(
            "logits rows have {} entries, vocabulary has {}",
            logits.vocab_size(),
            vocab.len()
        )));
    }
    write_f32_matrix(path, logits.raw())?;
    let meta = DumpMeta {
        seq_id: seq_id.to_string(),
        side,
        vocab_hash: vocab.content_hash(),
        realized_ids: logits.realized().to_vec(),
    };
    let sidecar = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

/// Reads a dump, checking its sidecar against `vocab` and the matrix size.
pub fn read_dump(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(DumpMeta, PositionLogits)> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: DumpMeta = serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e))?;
    let expected = vocab.content_hash();
    if meta.vocab_hash != expected {
        return Err(Error::VocabHashMismatch { what: path.display().to_string(), expected, found: meta.vocab_hash });
    }
    let values = read_f32_matrix(path)?;
    let want = meta.realized_ids.len() * vocab.len();
    if values.len() != want {
        return Err(Error::format(
            path,
            format!("{} values, expected {} positions x {} tokens", values.len(), meta.realized_ids.len(), vocab.len()),
        ));
    }
    let logits = PositionLogits::new(vocab.len(), values, meta.realized_ids.clone())?;
    Ok((meta, logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_json(r#"["a","b","c"]"#).unwrap()
    }

    #[test]
    fn dump_round_trip() {
        let v = vocab();
        let logits = PositionLogits::from_rows(&[vec![0.5, -1.25, 2.0], vec![0.0, 1.0, -3.5]], vec![2, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_dump(&path, &logits, "seq0", Side::Student, &v).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * 3 * 4);
        let (meta, back) = read_dump(&path, &v).unwrap();
        assert_eq!(meta.seq_id, "seq0");
        assert_eq!(meta.side, Side::Student);
        assert_eq!(back, logits);
    }

    #[test]
    fn wrong_vocabulary_is_rejected() {
        let v = vocab();
        let logits = PositionLogits::from_rows(&[vec![0.0, 0.0, 0.0]], vec![1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_dump(&path, &logits, "x", Side::Teacher, &v).unwrap();
        let other = Vocabulary::from_json(r#"["a","b","d"]"#).unwrap();
        assert!(matches!(read_dump(&path, &other), Err(Error::VocabHashMismatch { .. })));
    }

    #[test]
    fn truncated_matrix_is_rejected() {
        let v = vocab();
        let logits = PositionLogits::from_rows(&[vec![0.0, 0.0, 0.0]], vec![1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_dump(&path, &logits, "x", Side::Teacher, &v).unwrap();
        std::fs::write(&path, [0u8; 8]).unwrap();
        assert!(matches!(read_dump(&path, &v), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_sidecar_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dump(dir.path().join("nope.bin"), &vocab()).unwrap_err();
        assert!(err.is_io());
    }
}
