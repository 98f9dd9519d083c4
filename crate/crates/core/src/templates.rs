//! Few-shot template sets and prompt rendering.
//!
//! A template set holds hand-aligned example sentences split into parallel
//! chunks. Rendering is byte-exact: every line ends in a single `\n`,
//! examples are separated by one blank line, and the prompt ends with the
//! mask placeholder on the target-language line of the test block.
//!
//! # Template file format
//!
//! ```text
//! source_lang: Malay
//! target_lang: Indonesian
//!
//! S: Saintis dari Stamford Universiti Sekolah
//! T: Ilmuwan dari Stanford University School of
//! S: Perubatan pada hari Isnin
//! T: Medicine pada hari Senin
//!
//! S: ...
//! T: ...
//!
//! == contextual ==
//! S: ...
//! T: ...
//!
//! == full ==
//! S: <whole source sentence>
//! T: <whole target sentence>
//! ```
//!
//! Blank lines separate examples in the chunked sections. In `== full ==`
//! every `S:`/`T:` pair is its own example. Lines starting with `#` are
//! comments. `== contextual ==` is optional; without it contextual examples
//! are derived by merging adjacent chunk pairs.

use crate::chunking::Chunk;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder written into rendered prompts. Backends translate it into
/// their own sentinel.
pub const MASK: &str = "⟨mask⟩";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("example {example} ({section}): {source_chunks} source chunks but {target_chunks} target chunks")]
    Alignment {
        section: &'static str,
        example: usize,
        source_chunks: usize,
        target_chunks: usize,
    },
    #[error("contextual window must hold 2 or 3 chunks, got {0}")]
    WindowSize(usize),
    #[error("requested {requested} shots but the template set has {available} examples")]
    Shots { requested: usize, available: usize },
}

fn parse_error(line: usize, message: impl Into<String>) -> TemplateError {
    TemplateError::Parse {
        line,
        message: message.into(),
    }
}

/// One example sentence split into monotonically aligned chunk pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedExample {
    pub source_chunks: Vec<String>,
    pub target_chunks: Vec<String>,
}

impl AlignedExample {
    pub fn new(source_chunks: Vec<String>, target_chunks: Vec<String>) -> Self {
        Self {
            source_chunks,
            target_chunks,
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.source_chunks
            .iter()
            .map(String::as_str)
            .zip(self.target_chunks.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.source_chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_chunks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

/// The few-shot material for one translation direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    pub source_lang: String,
    pub target_lang: String,
    pub independent_examples: Vec<AlignedExample>,
    pub contextual_examples: Vec<AlignedExample>,
    pub full_sentence_examples: Vec<SentencePair>,
}

impl PromptTemplateSet {
    pub fn shots(&self) -> usize {
        self.independent_examples.len()
    }

    /// Keeps the first `shots` examples of every section.
    pub fn truncated(&self, shots: usize) -> Result<Self, TemplateError> {
        if shots == 0 || shots > self.shots() {
            return Err(TemplateError::Shots {
                requested: shots,
                available: self.shots(),
            });
        }
        let mut out = self.clone();
        out.independent_examples.truncate(shots);
        out.contextual_examples.truncate(shots);
        out.full_sentence_examples.truncate(shots);
        Ok(out)
    }

    /// A set with no examples at all; prompts consist of the test block only.
    /// Only useful for replicating the zero-shot failure mode.
    pub fn zero_shot(&self) -> Self {
        Self {
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            independent_examples: Vec::new(),
            contextual_examples: Vec::new(),
            full_sentence_examples: Vec::new(),
        }
    }

    fn header(&self) -> String {
        format!("Translate from {} to {}:", self.source_lang, self.target_lang)
    }
}

/// A prompt ready for a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub mask_positions: usize,
}

impl RenderedPrompt {
    fn new(text: String) -> Self {
        let mask_positions = text.matches(MASK).count();
        Self {
            text,
            mask_positions,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Independent,
    Contextual,
    Full,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Independent => "independent",
            Section::Contextual => "contextual",
            Section::Full => "full",
        }
    }
}

#[derive(Default)]
struct Block {
    first_line: usize,
    lines: Vec<(usize, bool, String)>,
}

struct Parser {
    source_lang: Option<String>,
    target_lang: Option<String>,
    section: Section,
    block: Block,
    independent: Vec<AlignedExample>,
    contextual: Vec<AlignedExample>,
    contextual_seen: bool,
    full: Vec<SentencePair>,
    pending_full_source: Option<(usize, String)>,
}

impl Parser {
    fn flush_block(&mut self) -> Result<(), TemplateError> {
        let block = std::mem::take(&mut self.block);
        if block.lines.is_empty() {
            return Ok(());
        }
        let sources = block.lines.iter().filter(|l| l.1).count();
        let targets = block.lines.len() - sources;
        let (examples, section) = match self.section {
            Section::Independent => (&mut self.independent, Section::Independent),
            Section::Contextual => (&mut self.contextual, Section::Contextual),
            Section::Full => unreachable!("full section has no blocks"),
        };
        if sources != targets {
            return Err(TemplateError::Alignment {
                section: section.name(),
                example: examples.len() + 1,
                source_chunks: sources,
                target_chunks: targets,
            });
        }
        let mut example = AlignedExample::new(Vec::new(), Vec::new());
        for (i, (line, is_source, text)) in block.lines.into_iter().enumerate() {
            if is_source != (i % 2 == 0) {
                return Err(parse_error(
                    line,
                    format!(
                        "expected alternating S:/T: lines in example starting at line {}",
                        block.first_line
                    ),
                ));
            }
            if is_source {
                example.source_chunks.push(text);
            } else {
                example.target_chunks.push(text);
            }
        }
        examples.push(example);
        Ok(())
    }

    fn line(&mut self, number: usize, raw: &str) -> Result<(), TemplateError> {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            return Ok(());
        }
        if trimmed.is_empty() {
            if self.section != Section::Full {
                self.flush_block()?;
            }
            return Ok(());
        }
        if trimmed.starts_with("==") {
            self.flush_block()?;
            self.finish_full()?;
            self.section = match trimmed {
                "== full ==" => Section::Full,
                "== contextual ==" => {
                    self.contextual_seen = true;
                    Section::Contextual
                }
                "== independent ==" => Section::Independent,
                other => return Err(parse_error(number, format!("unknown section {other:?}"))),
            };
            return Ok(());
        }
        let (is_source, text) = if let Some(rest) = trimmed.strip_prefix("S:") {
            (true, rest.trim())
        } else if let Some(rest) = trimmed.strip_prefix("T:") {
            (false, rest.trim())
        } else if let Some(rest) = trimmed.strip_prefix("source_lang:") {
            return self.set_label(number, true, rest.trim());
        } else if let Some(rest) = trimmed.strip_prefix("target_lang:") {
            return self.set_label(number, false, rest.trim());
        } else {
            return Err(parse_error(number, format!("unrecognized line {trimmed:?}")));
        };
        if self.source_lang.is_none() || self.target_lang.is_none() {
            return Err(parse_error(
                number,
                "example lines must follow the source_lang/target_lang header",
            ));
        }
        if text.is_empty() {
            return Err(parse_error(number, "empty chunk text"));
        }
        match self.section {
            Section::Full => match (is_source, self.pending_full_source.take()) {
                (true, None) => self.pending_full_source = Some((number, text.to_string())),
                (false, Some((_, source))) => self.full.push(SentencePair {
                    source,
                    target: text.to_string(),
                }),
                (true, Some(_)) => return Err(parse_error(number, "S: line without a T: line")),
                (false, None) => return Err(parse_error(number, "T: line without an S: line")),
            },
            _ => {
                if self.block.lines.is_empty() {
                    self.block.first_line = number;
                }
                self.block.lines.push((number, is_source, text.to_string()));
            }
        }
        Ok(())
    }

    fn set_label(&mut self, number: usize, source: bool, value: &str) -> Result<(), TemplateError> {
        if value.is_empty() {
            return Err(parse_error(number, "empty language label"));
        }
        let slot = if source {
            &mut self.source_lang
        } else {
            &mut self.target_lang
        };
        if slot.is_some() {
            return Err(parse_error(number, "duplicate language label"));
        }
        *slot = Some(value.to_string());
        Ok(())
    }

    fn finish_full(&mut self) -> Result<(), TemplateError> {
        match self.pending_full_source.take() {
            Some((line, _)) => Err(parse_error(line, "S: line without a T: line")),
            None => Ok(()),
        }
    }
}

/// Parses a template file.
pub fn load_template_set(document: &str) -> Result<PromptTemplateSet, TemplateError> {
    let mut parser = Parser {
        source_lang: None,
        target_lang: None,
        section: Section::Independent,
        block: Block::default(),
        independent: Vec::new(),
        contextual: Vec::new(),
        contextual_seen: false,
        full: Vec::new(),
        pending_full_source: None,
    };
    let mut last = 0;
    for (i, line) in document.lines().enumerate() {
        last = i + 1;
        parser.line(last, line)?;
    }
    parser.flush_block()?;
    parser.finish_full()?;

    let eof = last.max(1);
    let source_lang = parser
        .source_lang
        .ok_or_else(|| parse_error(eof, "missing source_lang header"))?;
    let target_lang = parser
        .target_lang
        .ok_or_else(|| parse_error(eof, "missing target_lang header"))?;
    if parser.independent.is_empty() {
        return Err(parse_error(eof, "no chunked examples found"));
    }
    let contextual_examples = if parser.contextual_seen {
        parser.contextual
    } else {
        derive_contextual_examples(&parser.independent)
    };
    let full_sentence_examples = if parser.full.is_empty() {
        parser
            .independent
            .iter()
            .map(|e| SentencePair {
                source: e.source_chunks.join(" "),
                target: e.target_chunks.join(" "),
            })
            .collect()
    } else {
        parser.full
    };
    Ok(PromptTemplateSet {
        source_lang,
        target_lang,
        independent_examples: parser.independent,
        contextual_examples,
        full_sentence_examples,
    })
}

/// Merges chunk pairs `(2i, 2i+1)` with a single space on both sides; an odd
/// trailing pair stays as it is.
pub fn derive_contextual_examples(independent: &[AlignedExample]) -> Vec<AlignedExample> {
    fn merge(chunks: &[String]) -> Vec<String> {
        chunks.chunks(2).map(|pair| pair.join(" ")).collect()
    }
    independent
        .iter()
        .map(|e| AlignedExample::new(merge(&e.source_chunks), merge(&e.target_chunks)))
        .collect()
}

fn push_chunked_examples(out: &mut String, set: &PromptTemplateSet, examples: &[AlignedExample]) {
    for example in examples {
        out.push_str(&set.header());
        out.push('\n');
        for (source, target) in example.pairs() {
            push_line(out, &set.source_lang, source);
            push_line(out, &set.target_lang, target);
        }
        out.push('\n');
    }
}

fn push_line(out: &mut String, label: &str, text: &str) {
    out.push_str(label);
    out.push_str(": ");
    out.push_str(text);
    out.push('\n');
}

fn push_test_block(out: &mut String, set: &PromptTemplateSet, source: &str, target_line: &str) {
    out.push_str(&set.header());
    out.push('\n');
    push_line(out, &set.source_lang, source);
    out.push_str(&set.target_lang);
    out.push_str(": ");
    out.push_str(target_line);
}

fn masked_line(before: Option<&str>, after: Option<&str>) -> String {
    let mut parts = Vec::with_capacity(3);
    if let Some(b) = before.filter(|s| !s.is_empty()) {
        parts.push(b);
    }
    parts.push(MASK);
    if let Some(a) = after.filter(|s| !s.is_empty()) {
        parts.push(a);
    }
    parts.join(" ")
}

pub fn render_independent_prompt(set: &PromptTemplateSet, test_chunk: &Chunk) -> RenderedPrompt {
    let mut text = String::new();
    push_chunked_examples(&mut text, set, &set.independent_examples);
    push_test_block(&mut text, set, &test_chunk.text(), MASK);
    RenderedPrompt::new(text)
}

/// Renders a contextual infill prompt. The source line concatenates the
/// window chunks; the target line is `prev ⟨mask⟩ next` with absent parts
/// omitted.
pub fn render_contextual_prompt(
    set: &PromptTemplateSet,
    window: &[&Chunk],
    prev_contextual: Option<&str>,
    next_independent: Option<&str>,
) -> Result<RenderedPrompt, TemplateError> {
    if !(2..=3).contains(&window.len()) {
        return Err(TemplateError::WindowSize(window.len()));
    }
    let source = window
        .iter()
        .map(|c| c.text())
        .collect::<Vec<_>>()
        .join(" ");
    let mut text = String::new();
    push_chunked_examples(&mut text, set, &set.contextual_examples);
    push_test_block(
        &mut text,
        set,
        &source,
        &masked_line(prev_contextual, next_independent),
    );
    Ok(RenderedPrompt::new(text))
}

/// Full-sentence prompt used by standard prompting and SAP. `partial_output`
/// is the text generated so far and precedes the mask.
pub fn render_standard_prompt(
    set: &PromptTemplateSet,
    test_sentence: &str,
    partial_output: &str,
) -> RenderedPrompt {
    let mut text = String::new();
    for pair in &set.full_sentence_examples {
        text.push_str(&set.header());
        text.push('\n');
        push_line(&mut text, &set.source_lang, &pair.source);
        push_line(&mut text, &set.target_lang, &pair.target);
        text.push('\n');
    }
    push_test_block(
        &mut text,
        set,
        test_sentence,
        &masked_line(Some(partial_output), None),
    );
    RenderedPrompt::new(text)
}
