//! Line-oriented JSON (JSONL) reading and writing shared by the file-backed
//! interfaces. Files are UTF-8 with LF line endings, one object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    BadLine { path: String, line: usize, reason: String },
}

/// A skipped input line and why it was skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub reason: String,
}

/// Reads a JSONL file, collecting malformed lines as issues instead of
/// failing. Returns `(line_number, value)` pairs for the lines that parsed.
/// Blank lines are ignored.
pub fn read_jsonl_lenient<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<(usize, T)>, Vec<LineIssue>), IoError> {
    let file = File::open(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut values = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => values.push((line_no, v)),
            Err(e) => issues.push(LineIssue { line: line_no, reason: e.to_string() }),
        }
    }
    Ok((values, issues))
}

/// Reads a JSONL file where any malformed line is an error.
pub fn read_jsonl_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let (values, issues) = read_jsonl_lenient(path)?;
    if let Some(issue) = issues.first() {
        return Err(IoError::BadLine {
            path: path.display().to_string(),
            line: issue.line,
            reason: issue.reason.clone(),
        });
    }
    Ok(values.into_iter().map(|(_, v)| v).collect())
}

/// Writes items as JSONL, one object per line, LF endings.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let wrap = |source| IoError::Write { path: path.display().to_string(), source };
    let file = File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| IoError::Write {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        out.write_all(line.as_bytes()).map_err(wrap)?;
        out.write_all(b"\n").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        k: String,
        v: i64,
    }

    #[test]
    fn lenient_read_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"k\":\"a\",\"v\":1}\nnot json\n\n{\"k\":\"b\",\"v\":2}\n")
            .unwrap();
        let (rows, issues) = read_jsonl_lenient::<Row>(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].0, 4);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].line, 2);
        assert!(read_jsonl_strict::<Row>(&path).is_err());
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![Row { k: "a".into(), v: 1 }, Row { k: "b".into(), v: -2 }];
        write_jsonl(&path, &rows).unwrap();
        let back = read_jsonl_strict::<Row>(&path).unwrap();
        assert_eq!(back, rows);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.ends_with('\n') && !raw.contains("\r\n"));
    }
}
