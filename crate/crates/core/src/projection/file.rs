//! Projection file: a header line followed by one JSON line per nonempty row.
//!
//! ```text
//! {"n_student":3,"n_teacher":4,"config":{...},"content_hash":"<sha256 of row lines>"}
//! {"s":0,"entries":[[2,1.0]],"provenance":"exact"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProjectionConfig, Provenance, SparseProjection};
use crate::math::sha256_hex;
use crate::vocab::TokenId;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    n_student: usize,
    n_teacher: usize,
    config: ProjectionConfig,
    content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    s: TokenId,
    entries: Vec<(TokenId, f64)>,
    provenance: Provenance,
}

impl SparseProjection {
    fn row_lines(&self) -> Vec<String> {
        (0..self.student_size() as TokenId)
            .filter(|&s| !self.entry_range(s).is_empty())
            .map(|s| {
                let record = RowRecord { s, entries: self.row(s).collect(), provenance: self.provenance(s) };
                serde_json::to_string(&record).expect("row serializes")
            })
            .collect()
    }

    fn hash_lines(lines: &[String]) -> String {
        let mut body = String::new();
        for line in lines {
            body.push_str(line);
            body.push('\n');
        }
        sha256_hex(body.as_bytes())
    }

    /// SHA-256 over the serialized row records.
    pub fn content_hash(&self) -> String {
        Self::hash_lines(&self.row_lines())
    }

    pub fn to_jsonl(&self) -> String {
        let lines = self.row_lines();
        let header = Header {
            n_student: self.student_size(),
            n_teacher: self.teacher_size(),
            config: self.config,
            content_hash: Self::hash_lines(&lines),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a projection file, verifying the content hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line =
            lines.next().ok_or_else(|| Error::format(path, "missing header"))?.map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::format(path, e))?;
        header.config.validate()?;

        let mut row_lines = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.is_empty() {
                row_lines.push(line);
            }
        }
        let found = Self::hash_lines(&row_lines);
        if found != header.content_hash {
            return Err(Error::HashMismatch { expected: header.content_hash, found });
        }

        let mut rows: Vec<(Vec<(TokenId, f64)>, Provenance)> = vec![(Vec::new(), Provenance::Empty); header.n_student];
        let mut last: Option<TokenId> = None;
        for (lineno, line) in row_lines.iter().enumerate() {
            let record: RowRecord =
                serde_json::from_str(line).map_err(|e| Error::format(path, format!("row line {}: {e}", lineno + 2)))?;
            if record.s as usize >= header.n_student || last.is_some_and(|l| record.s <= l) {
                return Err(Error::format(
                    path,
                    format!("row line {}: student id {} out of order or range", lineno + 2, record.s),
                ));
            }
            last = Some(record.s);
            rows[record.s as usize] = (record.entries, record.provenance);
        }
        let w = SparseProjection::from_rows(header.n_teacher, rows, header.config)?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::build_projection;
    use crate::vocab::{make_toy_tokenizer, ToyKind};

    fn sample() -> SparseProjection {
        let tok_s = make_toy_tokenizer(ToyKind::NumeralPreserving, &["hello there"]);
        let tok_t = make_toy_tokenizer(ToyKind::DigitSplitting, &["hello"]);
        build_projection(tok_s.vocab(), tok_t.vocab(), &tok_t, &ProjectionConfig::default()).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let w = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        w.save(&path).unwrap();
        let back = SparseProjection::load(&path).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_jsonl(), w.to_jsonl());
    }

    #[test]
    fn build_is_byte_deterministic() {
        assert_eq!(sample().to_jsonl(), sample().to_jsonl());
    }

    #[test]
    fn tampered_file_fails_hash_check() {
        let w = sample();
        let text = w.to_jsonl().replacen("\"exact\"", "\"multi_token\"", 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(SparseProjection::load(&path), Err(Error::HashMismatch { .. })));
    }
}
