use super::{BackendError, InfillBackend, InfillRequest, RawResult};
use crate::templates::MASK;
use std::collections::HashMap;

/// Deterministic lexicon backend.
///
/// It reads the test block at the end of a rendered prompt, works out which
/// source tokens the mask stands for and maps them through the lexicon one
/// by one. With a one-to-one lexicon the words before the mask on the target
/// line cover a prefix of the source line and the words after it a suffix, so
/// the mask demands the tokens in between:
///
/// * independent prompts: the whole test chunk;
/// * contextual prompts: the middle chunk of the window;
/// * standard/SAP prompts: the next untranslated tokens.
///
/// At most `max_new_tokens` tokens are emitted. Unknown tokens pass through.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    lexicon: HashMap<String, String>,
}

impl MockBackend {
    pub fn new(lexicon: HashMap<String, String>) -> Self {
        Self { lexicon }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(s, t)| (s.to_string(), t.to_string()))
                .collect(),
        )
    }

    /// Parses a tab-separated `source<TAB>target` lexicon, one entry per line.
    pub fn parse_lexicon(text: &str) -> Result<Self, String> {
        let mut lexicon = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| format!("lexicon line {}: expected source<TAB>target", i + 1))?;
            lexicon.insert(s.trim().to_string(), t.trim().to_string());
        }
        Ok(Self { lexicon })
    }

    pub fn map_token<'a>(&'a self, token: &'a str) -> &'a str {
        self.lexicon.get(token).map(String::as_str).unwrap_or(token)
    }

    /// Word-by-word translation of a whole text.
    pub fn map_text(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|t| self.map_token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn respond(&self, request: &InfillRequest) -> Result<String, BackendError> {
        let block = locate_test_block(&request.prompt)?;
        let source: Vec<&str> = block.source.split_whitespace().collect();
        let (before, after) = block
            .target
            .split_once(MASK)
            .ok_or_else(|| BackendError::PromptShape("no mask on the target line".into()))?;
        let prefix = before.split_whitespace().count();
        let suffix = after.split_whitespace().count();
        let start = prefix.min(source.len());
        let end = source.len().saturating_sub(suffix).max(start);
        Ok(source[start..end]
            .iter()
            .take(request.max_new_tokens)
            .map(|t| self.map_token(t))
            .collect::<Vec<_>>()
            .join(" "))
    }
}

impl InfillBackend for MockBackend {
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        requests.iter().map(|r| self.respond(r)).collect()
    }

    fn describe(&self) -> String {
        format!("mock(lexicon entries={})", self.lexicon.len())
    }
}

pub(crate) struct TestBlock<'a> {
    pub source: &'a str,
    pub target: &'a str,
}

/// Finds `Translate from X to Y:` / `X: ...` / `Y: ...` at the end of a prompt.
pub(crate) fn locate_test_block(prompt: &str) -> Result<TestBlock<'_>, BackendError> {
    let lines: Vec<&str> = prompt.split('\n').collect();
    if lines.len() < 3 {
        return Err(BackendError::PromptShape("prompt shorter than a test block".into()));
    }
    let n = lines.len();
    let (header, src_line, tgt_line) = (lines[n - 3], lines[n - 2], lines[n - 1]);
    let labels = header
        .strip_prefix("Translate from ")
        .and_then(|h| h.strip_suffix(':'))
        .ok_or_else(|| BackendError::PromptShape(format!("unexpected header {header:?}")))?;
    for (at, _) in labels.match_indices(" to ") {
        let (src_label, tgt_label) = (&labels[..at], &labels[at + 4..]);
        let source = src_line
            .strip_prefix(src_label)
            .and_then(|r| r.strip_prefix(':'));
        let target = tgt_line
            .strip_prefix(tgt_label)
            .and_then(|r| r.strip_prefix(':'));
        if let (Some(source), Some(target)) = (source, target) {
            return Ok(TestBlock { source, target });
        }
    }
    Err(BackendError::PromptShape(
        "source/target lines do not match the header labels".into(),
    ))
}

/// A backend defined by a closure over single requests. Handy for scripted
/// and fault-injecting test doubles.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&InfillRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> InfillBackend for FnBackend<F>
where
    F: Fn(&InfillRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        requests.iter().map(|r| (self.f)(r)).collect()
    }

    fn describe(&self) -> String {
        "fn-backend".to_string()
    }
}
