//! Corpus-level translation metrics and significance testing.
//!
//! Scores follow sacreBLEU conventions so they can be compared against
//! published numbers: chrF++ (`nc:6|nw:2`, beta 2) and BLEU with
//! exponential smoothing. spBLEU is BLEU after a subword tokenizer, which
//! is supplied from outside as an executable.

mod bleu;
mod bootstrap;
mod chrf;

pub use bleu::{bleu, bleu_signature, bleu_statistics, bleu_with_options, spbleu, BleuStats};
pub use bootstrap::{paired_bootstrap, BootstrapResult, CorpusStatistic, MeanScore};
pub use chrf::{chrf_pp, chrf_statistics, ChrfStats, CHRF_SIGNATURE};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("need at least {required} samples, got {found}")]
    TooFewSamples { found: usize, required: usize },
    #[error("tokenizer failed: {0}")]
    Tokenizer(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Chrfpp,
    Bleu,
    Spbleu,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Chrfpp => "chrF++",
            MetricKind::Bleu => "BLEU",
            MetricKind::Spbleu => "spBLEU",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: MetricKind,
    pub corpus_score: f64,
    pub per_sentence: Vec<f64>,
    pub signature: String,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {:.2} ({})", self.metric, self.corpus_score, self.signature)
    }
}

pub(crate) fn check_corpus<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<(), MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

/// Turns lines of text into lines of space-separated tokens.
pub trait Tokenizer {
    /// Name used in score signatures (`tok:<name>`).
    fn name(&self) -> String;

    /// Whether the tokenizer splits words into subwords, making BLEU spBLEU.
    fn is_subword(&self) -> bool;

    fn tokenize_lines(&self, lines: &[String]) -> Result<Vec<String>, MetricError>;
}

/// Leaves text untouched; BLEU then splits on whitespace. Use this for
/// corpora that were tokenized beforehand.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> String {
        "none".to_string()
    }

    fn is_subword(&self) -> bool {
        false
    }

    fn tokenize_lines(&self, lines: &[String]) -> Result<Vec<String>, MetricError> {
        Ok(lines.to_vec())
    }
}

/// Pipes the corpus through a shell command, one line per segment, e.g. a
/// sentencepiece encoder for the FLORES-200 model.
#[derive(Debug, Clone)]
pub struct ExternalTokenizer {
    command: String,
    name: String,
}

impl ExternalTokenizer {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            name: "external".to_string(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Tokenizer for ExternalTokenizer {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn is_subword(&self) -> bool {
        true
    }

    fn tokenize_lines(&self, lines: &[String]) -> Result<Vec<String>, MetricError> {
        if lines.iter().any(|l| l.contains('\n')) {
            return Err(MetricError::Tokenizer("segments must not contain newlines".into()));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| MetricError::Tokenizer(format!("{}: {e}", self.command)))?;
        let mut input = lines.join("\n");
        input.push('\n');
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child
            .wait_with_output()
            .map_err(|e| MetricError::Tokenizer(e.to_string()))?;
        writer
            .join()
            .expect("writer thread")
            .map_err(|e| MetricError::Tokenizer(format!("writing to {}: {e}", self.command)))?;
        if !output.status.success() {
            return Err(MetricError::Tokenizer(format!(
                "{} exited with {}: {}",
                self.command,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = String::from_utf8(output.stdout)
            .map_err(|_| MetricError::Tokenizer("output is not UTF-8".into()))?;
        let out: Vec<String> = text.split('\n').take(lines.len()).map(str::to_string).collect();
        if out.len() < lines.len() {
            return Err(MetricError::Tokenizer(format!(
                "{} returned {} lines for {} inputs",
                self.command,
                out.len(),
                lines.len()
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_tokenizer_round_trip() {
        let tok = ExternalTokenizer::new("sed 's/a/a /g'");
        let out = tok
            .tokenize_lines(&["banana".to_string(), String::new(), "xyz".to_string()])
            .unwrap();
        assert_eq!(out, vec!["ba na na ", "", "xyz"]);
    }

    #[test]
    fn external_tokenizer_failures() {
        let err = ExternalTokenizer::new("exit 3").tokenize_lines(&["a".into()]).unwrap_err();
        assert!(matches!(err, MetricError::Tokenizer(_)));
        let short = ExternalTokenizer::new("head -c 0").tokenize_lines(&["a".into(), "b".into()]);
        assert!(matches!(short, Err(MetricError::Tokenizer(_))));
    }

    #[test]
    fn corpus_checks() {
        assert_eq!(
            check_corpus(&["a"], &["a", "b"]),
            Err(MetricError::LengthMismatch { hypotheses: 1, references: 2 })
        );
        assert_eq!(check_corpus::<&str, &str>(&[], &[]), Err(MetricError::EmptyCorpus));
    }
}
