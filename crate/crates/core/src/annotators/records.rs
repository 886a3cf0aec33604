//! `verdicts.jsonl`: one verdict per line, appended by a single writer.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnnotationVerdict, ParseStatus, RawResponse};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub prompt_id: String,
    pub transition_id: String,
    pub config_name: String,
    pub backend: String,
    pub raw_text: String,
    pub flags: IndexMap<String, bool>,
    pub matched: IndexMap<String, bool>,
    pub parse_status: ParseStatus,
    pub latency_ms: u64,
}

impl VerdictRecord {
    pub fn from_verdict(v: &AnnotationVerdict, config_name: &str) -> Self {
        Self {
            prompt_id: v.raw.prompt_id.clone(),
            transition_id: v.transition_id.clone(),
            config_name: config_name.to_owned(),
            backend: v.raw.backend.clone(),
            raw_text: v.raw.text.clone(),
            flags: v.subgoal_flags.clone(),
            matched: v.matched_canonical.clone(),
            parse_status: v.parse_status,
            latency_ms: v.raw.latency_ms,
        }
    }

    pub fn into_verdict(self) -> AnnotationVerdict {
        AnnotationVerdict {
            transition_id: self.transition_id,
            subgoal_flags: self.flags,
            matched_canonical: self.matched,
            parse_status: self.parse_status,
            raw: RawResponse {
                text: self.raw_text,
                latency_ms: self.latency_ms,
                backend: self.backend,
                prompt_id: self.prompt_id,
                truncated: false,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: malformed record")]
    Malformed { path: PathBuf, line: usize, source: serde_json::Error },
}

pub struct VerdictWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl VerdictWriter {
    /// Opens `path` for appending; existing lines are never rewritten.
    pub fn append(path: impl AsRef<Path>) -> Result<Self, RecordError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| RecordError::Io { path: path.clone(), source })?;
        Ok(Self { out: BufWriter::new(file), path })
    }

    pub fn write(&mut self, record: &VerdictRecord) -> Result<(), RecordError> {
        let io_err = |source| RecordError::Io { path: self.path.clone(), source };
        let line = serde_json::to_string(record).map_err(|e| io_err(io::Error::other(e)))?;
        self.out.write_all(line.as_bytes()).map_err(io_err)?;
        self.out.write_all(b"\n").map_err(io_err)?;
        self.out.flush().map_err(io_err)
    }
}

pub fn read_verdicts(path: impl AsRef<Path>) -> Result<Vec<VerdictRecord>, RecordError> {
    let path = path.as_ref();
    let io_err = |source| RecordError::Io { path: path.to_path_buf(), source };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path).map_err(io_err)?).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| RecordError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}
