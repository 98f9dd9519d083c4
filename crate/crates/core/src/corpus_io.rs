//! Reading corpora and writing run artifacts.
//!
//! Corpora are one segment per line. Traces are JSON lines, one record per
//! sentence. A run manifest is a single JSON document pinning the template
//! by its SHA-256 digest.

use crate::engine::{EngineConfig, Strategy, TranslationTrace};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: not valid UTF-8")]
    Encoding { path: PathBuf, line: usize },
    #[error("source has {source_lines} lines but target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}:{line}: blank source line")]
    BlankLine { path: PathBuf, line: usize },
    #[error("{path}: no segments")]
    Empty { path: PathBuf },
    #[error("cannot write record: {0}")]
    Sink(String),
    #[error("record {line}: {message}")]
    Record { line: usize, message: String },
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a one-segment-per-line file. A final newline does not start a new
/// segment and `\r\n` endings are accepted. Blank lines are kept.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    let mut body = bytes.as_slice();
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            String::from_utf8(raw.to_vec()).map_err(|_| CorpusError::Encoding {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusOrigin {
    pub source_path: PathBuf,
    pub target_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<(String, String)>,
    pub source_lang: String,
    pub target_lang: String,
    pub origin: CorpusOrigin,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<String> {
        self.pairs.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn references(&self) -> Vec<String> {
        self.pairs.iter().map(|(_, r)| r.clone()).collect()
    }
}

/// Language label taken from a file name such as `hin_Deva.devtest`.
fn lang_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Source segments for translation: every line must carry text.
pub fn load_sources(path: &Path) -> Result<Vec<String>, CorpusError> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(CorpusError::Empty {
            path: path.to_path_buf(),
        });
    }
    if let Some(i) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(CorpusError::BlankLine {
            path: path.to_path_buf(),
            line: i + 1,
        });
    }
    Ok(lines)
}

/// Pairs line `i` of `source` with line `i` of `target`.
pub fn load_parallel(source: &Path, target: &Path) -> Result<ParallelCorpus, CorpusError> {
    let sources = read_lines(source)?;
    let targets = read_lines(target)?;
    if sources.len() != targets.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let sources = load_sources(source)?;
    Ok(ParallelCorpus {
        pairs: sources.into_iter().zip(targets).collect(),
        source_lang: lang_label(source),
        target_lang: lang_label(target),
        origin: CorpusOrigin {
            source_path: source.to_path_buf(),
            target_path: target.to_path_buf(),
        },
    })
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_error(path))?);
    for line in lines {
        writeln!(out, "{line}").map_err(io_error(path))?;
    }
    out.flush().map_err(io_error(path))
}

/// Appends one trace as a JSON line and returns its record id.
pub fn persist_trace<W: Write>(trace: &TranslationTrace, sink: &mut W) -> Result<String, CorpusError> {
    let line = serde_json::to_string(trace).map_err(|e| CorpusError::Sink(e.to_string()))?;
    sink.write_all(line.as_bytes())
        .and_then(|_| sink.write_all(b"\n"))
        .map_err(|e| CorpusError::Sink(e.to_string()))?;
    Ok(format!("s{}", trace.sentence_index))
}

pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<TranslationTrace>, CorpusError> {
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        traces.push(serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(traces)
}

pub fn write_trace_file(path: &Path, traces: &[TranslationTrace]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_error(path))?);
    for t in traces {
        persist_trace(t, &mut out)?;
    }
    out.flush().map_err(io_error(path))
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TranslationTrace>, CorpusError> {
    read_traces(BufReader::new(File::open(path).map_err(io_error(path))?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub strategy: Strategy,
    pub engine: EngineConfig,
    pub language_pair: Option<String>,
    pub template_path: PathBuf,
    pub template_sha256: String,
    pub source_path: PathBuf,
    pub backend: String,
    pub seed: Option<u64>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub sentences: usize,
    pub failures: usize,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CorpusError::Sink(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(io_error(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Record {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Whether the template at `path` still has the recorded digest.
    pub fn template_matches(&self, path: &Path) -> Result<bool, CorpusError> {
        let bytes = fs::read(path).map_err(io_error(path))?;
        Ok(sha256_hex(&bytes) == self.template_sha256)
    }
}
