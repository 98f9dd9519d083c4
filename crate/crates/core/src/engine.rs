//! Translation strategies.
//!
//! `decomt` translates every chunk of a sentence independently, then walks
//! the chunks left to right and infills a contextual translation for each
//! one between the previous contextual translation and the next
//! independent translation. `sp` and `sap` are the full-sentence baselines
//! that append generated text back into the prompt.
//!
//! All strategies work on groups of sentences so that requests from
//! different sentences share physical backend calls. Within a sentence the
//! contextual steps are strictly sequential.

use crate::backend::{infill_batch_with, BackendError, InfillBackend, InfillRequest, InfillResponse};
use crate::chunking::{segment, tokenize, ChunkError, ChunkedSentence, TokenizedSentence};
use crate::templates::{
    render_contextual_prompt, render_independent_prompt, render_standard_prompt,
    PromptTemplateSet, TemplateError,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use thiserror::Error;

/// Marker a backend may emit to end generation early.
pub const END_OF_SENTENCE: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Decomt,
    DecomtSingleStage,
    Sp,
    Sap,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Decomt => "decomt",
            Strategy::DecomtSingleStage => "decomt_single_stage",
            Strategy::Sp => "sp",
            Strategy::Sap => "sap",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Independent,
    Contextual,
    Standard,
    Sap,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Independent => "independent",
            Stage::Contextual => "contextual",
            Stage::Standard => "standard",
            Stage::Sap => "sap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("sentence {sentence}, {stage} step {index}: {source}")]
    Backend {
        sentence: usize,
        stage: Stage,
        index: usize,
        source: BackendError,
    },
    #[error("independent translation has {found} chunks but the source has {expected}")]
    Alignment { expected: usize, found: usize },
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

impl EngineError {
    pub fn is_transport(&self) -> bool {
        matches!(self, EngineError::Backend { source, .. } if source.is_transport())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Source tokens per chunk.
    pub m: usize,
    /// Chunk sizes accepted for `m`.
    pub allowed_m: Vec<usize>,
    /// Requests per physical backend call.
    pub batch_size: usize,
    /// Sentences whose requests are pooled into shared calls.
    pub sentences_per_group: usize,
    /// Few-shot examples used from the template set; all of them when unset.
    pub shots: Option<usize>,
    /// Render prompts with no examples at all.
    pub zero_shot: bool,
    /// Stop after the independent stage.
    pub single_stage: bool,
    /// Approximate tokens per chunk in the contextual examples.
    pub contextual_span_tokens: usize,
    /// Tokens requested per call by standard prompting.
    pub sp_window: usize,
    /// Output cap for standard prompting; defaults to twice the source length.
    pub sp_max_len: Option<usize>,
    pub max_in_flight: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            m: 4,
            allowed_m: vec![3, 4, 5],
            batch_size: 8,
            sentences_per_group: 8,
            shots: None,
            zero_shot: false,
            single_stage: false,
            contextual_span_tokens: 10,
            sp_window: 5,
            sp_max_len: None,
            max_in_flight: 1,
        }
    }
}

impl EngineConfig {
    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.allowed_m.contains(&self.m) {
            return Err(EngineError::Config(format!(
                "m={} is not in the allowed set {:?}",
                self.m, self.allowed_m
            )));
        }
        if self.batch_size == 0 || self.sentences_per_group == 0 {
            return Err(EngineError::Config(
                "batch sizes must be at least 1".to_string(),
            ));
        }
        if self.shots == Some(0) && !self.zero_shot {
            return Err(EngineError::Config(
                "shots must be at least 1 (zero-shot needs the explicit flag)".to_string(),
            ));
        }
        Ok(())
    }

    /// The template set as seen by prompts under this configuration.
    pub fn view(&self, set: &PromptTemplateSet) -> Result<PromptTemplateSet, EngineError> {
        if self.zero_shot {
            return Ok(set.zero_shot());
        }
        match self.shots {
            Some(n) if n != set.shots() => Ok(set.truncated(n)?),
            _ => Ok(set.clone()),
        }
    }

    fn independent_budget(&self) -> usize {
        2 * self.m
    }

    fn contextual_budget(&self) -> usize {
        2 * self.contextual_span_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndependentTranslation {
    pub chunks: Vec<String>,
    pub assembled: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualTranslation {
    pub chunks: Vec<String>,
    pub assembled: String,
}

fn assemble(chunks: &[String]) -> String {
    chunks
        .iter()
        .map(|c| c.trim())
        .filter(|c| !c.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl IndependentTranslation {
    pub fn new(chunks: Vec<String>) -> Self {
        let assembled = assemble(&chunks);
        Self { chunks, assembled }
    }
}

impl ContextualTranslation {
    pub fn new(chunks: Vec<String>) -> Self {
        let assembled = assemble(&chunks);
        Self { chunks, assembled }
    }
}

/// One logical request/response exchange recorded in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCall {
    pub stage: Stage,
    pub step: usize,
    pub request_id: String,
    pub prompt: String,
    pub response: String,
    pub raw: String,
}

impl BackendCall {
    fn new(stage: Stage, step: usize, request: &InfillRequest, response: &InfillResponse) -> Self {
        Self {
            stage,
            step,
            request_id: request.request_id.clone(),
            prompt: request.prompt.clone(),
            response: response.text.clone(),
            raw: response.raw.clone(),
        }
    }
}

/// Physical backend calls made for the sentence group a trace belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAccounting {
    pub group: usize,
    pub group_size: usize,
    pub independent_calls: usize,
    pub contextual_calls: usize,
    pub generation_calls: usize,
}

impl CallAccounting {
    pub fn total(&self) -> usize {
        self.independent_calls + self.contextual_calls + self.generation_calls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationTrace {
    pub sentence_index: usize,
    pub strategy: Strategy,
    pub m: usize,
    pub source: TokenizedSentence,
    pub chunked: Option<ChunkedSentence>,
    pub independent: Option<IndependentTranslation>,
    pub contextual: Option<ContextualTranslation>,
    pub output: String,
    pub backend_calls: Vec<BackendCall>,
    pub accounting: CallAccounting,
    /// Contextual steps whose empty infill was replaced by the independent chunk.
    pub fallback_steps: Vec<usize>,
    /// Generation stopped at the length guard rather than a terminator.
    pub truncated: bool,
}

impl TranslationTrace {
    pub fn calls_in_stage(&self, stage: Stage) -> usize {
        self.backend_calls.iter().filter(|c| c.stage == stage).count()
    }
}

/// One contextual infill step over chunk indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextualStep {
    /// Chunk whose contextual translation this step produces.
    pub target: usize,
    /// Source chunks concatenated on the prompt's source line.
    pub window: Range<usize>,
    /// Contextual translation placed before the mask.
    pub prev_contextual: Option<usize>,
    /// Independent translation placed after the mask.
    pub next_independent: Option<usize>,
}

/// The contextual schedule for a sentence of `beta` chunks. Empty for
/// `beta < 2`, where the independent translation is reused.
pub fn contextual_schedule(beta: usize) -> Vec<ContextualStep> {
    if beta < 2 {
        return Vec::new();
    }
    (0..beta)
        .map(|t| {
            let first = t == 0;
            let last = t + 1 == beta;
            ContextualStep {
                target: t,
                window: if first { 0..2 } else if last { t - 1..t + 1 } else { t - 1..t + 2 },
                prev_contextual: (!first).then(|| t - 1),
                next_independent: (!last).then_some(t + 1),
            }
        })
        .collect()
}

/// Largest number of SAP decode steps for a source of `tokens` words:
/// one and a half times the source length, truncated.
pub fn sap_budget(tokens: usize) -> usize {
    tokens * 3 / 2
}

fn is_terminator(text: &str) -> bool {
    let t = text.trim();
    t.is_empty() || t == END_OF_SENTENCE
}

fn backend_error(sentence: usize, stage: Stage, index: usize, source: BackendError) -> EngineError {
    EngineError::Backend {
        sentence,
        stage,
        index,
        source,
    }
}

/// Intermediate state of one sentence in a group.
struct Slot {
    index: usize,
    source: TokenizedSentence,
    chunked: Option<ChunkedSentence>,
    independent: Vec<String>,
    contextual: Vec<String>,
    calls: Vec<BackendCall>,
    fallback_steps: Vec<usize>,
    partial: Vec<String>,
    done: bool,
    truncated: bool,
    error: Option<EngineError>,
}

impl Slot {
    fn new(index: usize, sentence: &str) -> Self {
        let source = tokenize(sentence);
        let error = source.is_empty().then_some(EngineError::Chunk(ChunkError::EmptySentence));
        Self {
            index,
            source,
            chunked: None,
            independent: Vec::new(),
            contextual: Vec::new(),
            calls: Vec::new(),
            fallback_steps: Vec::new(),
            partial: Vec::new(),
            done: false,
            truncated: false,
            error,
        }
    }

    fn alive(&self) -> bool {
        self.error.is_none()
    }

    fn beta(&self) -> usize {
        self.chunked.as_ref().map_or(0, ChunkedSentence::beta)
    }
}

/// Submits the requests, attributing each result to its owner.
fn dispatch<B: InfillBackend + ?Sized>(
    backend: &B,
    config: &EngineConfig,
    slots: &mut [Slot],
    requests: Vec<(usize, usize, InfillRequest)>,
    stage: Stage,
    mut accept: impl FnMut(&mut Slot, usize, &InfillResponse),
) -> usize {
    let (owners, reqs): (Vec<(usize, usize)>, Vec<InfillRequest>) = requests
        .into_iter()
        .map(|(slot, step, r)| ((slot, step), r))
        .unzip();
    let outcome = infill_batch_with(backend, &reqs, config.batch_size, config.max_in_flight);
    for (((slot, step), req), result) in owners.into_iter().zip(&reqs).zip(outcome.responses) {
        let s = &mut slots[slot];
        if !s.alive() {
            continue;
        }
        match result {
            Ok(resp) => {
                s.calls.push(BackendCall::new(stage, step, req, &resp));
                accept(s, step, &resp);
            }
            Err(e) => s.error = Some(backend_error(s.index, stage, step, e)),
        }
    }
    outcome.physical_calls
}

fn run_independent<B: InfillBackend + ?Sized>(
    backend: &B,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    slots: &mut [Slot],
) -> usize {
    let mut requests = Vec::new();
    for (si, slot) in slots.iter_mut().enumerate() {
        if !slot.alive() {
            continue;
        }
        match segment(&slot.source, config.m) {
            Ok(chunked) => {
                for chunk in &chunked.chunks {
                    let prompt = render_independent_prompt(set, chunk);
                    let id = format!("s{}-ind-{}", slot.index, chunk.index);
                    requests.push((si, chunk.index, InfillRequest::new(id, prompt.text, config.independent_budget())));
                }
                slot.independent = vec![String::new(); chunked.beta()];
                slot.chunked = Some(chunked);
            }
            Err(e) => slot.error = Some(e.into()),
        }
    }
    dispatch(backend, config, slots, requests, Stage::Independent, |s, step, resp| {
        s.independent[step] = resp.text.clone();
    })
}

fn run_contextual<B: InfillBackend + ?Sized>(
    backend: &B,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    slots: &mut [Slot],
) -> Result<usize, EngineError> {
    for slot in slots.iter_mut().filter(|s| s.alive()) {
        slot.contextual = vec![String::new(); slot.beta()];
        if slot.beta() == 1 {
            slot.contextual[0] = slot.independent[0].clone();
        }
    }
    let max_beta = slots.iter().filter(|s| s.alive()).map(Slot::beta).max().unwrap_or(0);
    let mut physical = 0;
    for step in 0..max_beta {
        let mut requests = Vec::new();
        for (si, slot) in slots.iter().enumerate() {
            if !slot.alive() || slot.beta() < 2 || step >= slot.beta() {
                continue;
            }
            let chunked = slot.chunked.as_ref().expect("segmented");
            let plan = &contextual_schedule(slot.beta())[step];
            let window: Vec<_> = chunked.chunks[plan.window.clone()].iter().collect();
            let prompt = render_contextual_prompt(
                set,
                &window,
                plan.prev_contextual.map(|i| slot.contextual[i].as_str()),
                plan.next_independent.map(|i| slot.independent[i].as_str()),
            )?;
            let id = format!("s{}-ctx-{}", slot.index, step);
            requests.push((si, step, InfillRequest::new(id, prompt.text, config.contextual_budget())));
        }
        physical += dispatch(backend, config, slots, requests, Stage::Contextual, |s, step, resp| {
            if resp.text.trim().is_empty() {
                s.contextual[step] = s.independent[step].clone();
                s.fallback_steps.push(step);
            } else {
                s.contextual[step] = resp.text.clone();
            }
        });
    }
    Ok(physical)
}

fn finish(
    slots: Vec<Slot>,
    strategy: Strategy,
    m: usize,
    accounting: CallAccounting,
) -> Vec<Result<TranslationTrace, EngineError>> {
    slots
        .into_iter()
        .map(|slot| {
            if let Some(e) = slot.error {
                return Err(e);
            }
            let (independent, contextual, output) = match strategy {
                Strategy::Decomt | Strategy::DecomtSingleStage => {
                    let independent = IndependentTranslation::new(slot.independent);
                    let contextual = (strategy == Strategy::Decomt)
                        .then(|| ContextualTranslation::new(slot.contextual));
                    let output = contextual
                        .as_ref()
                        .map_or_else(|| independent.assembled.clone(), |c| c.assembled.clone());
                    (Some(independent), contextual, output)
                }
                Strategy::Sp | Strategy::Sap => (None, None, slot.partial.join(" ")),
            };
            Ok(TranslationTrace {
                sentence_index: slot.index,
                strategy,
                m,
                source: slot.source,
                chunked: slot.chunked,
                independent,
                contextual,
                output,
                backend_calls: slot.calls,
                accounting,
                fallback_steps: slot.fallback_steps,
                truncated: slot.truncated,
            })
        })
        .collect()
}

/// Translates a group of sentences with the two-stage chunked procedure
/// (or only its first stage when `config.single_stage` is set). Sentence
/// indices in the traces start at `first_index`.
pub fn decomt_translate_group<B: InfillBackend + ?Sized>(
    sentences: &[&str],
    first_index: usize,
    group: usize,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<Vec<Result<TranslationTrace, EngineError>>, EngineError> {
    config.validate()?;
    let set = config.view(set)?;
    let mut slots: Vec<Slot> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| Slot::new(first_index + i, s))
        .collect();
    let independent_calls = run_independent(backend, config, &set, &mut slots);
    let contextual_calls = if config.single_stage {
        0
    } else {
        run_contextual(backend, config, &set, &mut slots)?
    };
    let strategy = if config.single_stage {
        Strategy::DecomtSingleStage
    } else {
        Strategy::Decomt
    };
    let accounting = CallAccounting {
        group,
        group_size: sentences.len(),
        independent_calls,
        contextual_calls,
        generation_calls: 0,
    };
    Ok(finish(slots, strategy, config.m, accounting))
}

pub fn decomt_translate<B: InfillBackend + ?Sized>(
    sentence: &str,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<TranslationTrace, EngineError> {
    decomt_translate_group(&[sentence], 0, 0, config, set, backend)?
        .pop()
        .expect("one trace per sentence")
}

/// Translates every chunk of `source` in isolation.
pub fn translate_independent<B: InfillBackend + ?Sized>(
    source: &ChunkedSentence,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<(IndependentTranslation, Vec<BackendCall>), EngineError> {
    let requests: Vec<_> = source
        .chunks
        .iter()
        .map(|c| {
            let prompt = render_independent_prompt(set, c);
            InfillRequest::new(format!("ind-{}", c.index), prompt.text, config.independent_budget())
        })
        .collect();
    let outcome = infill_batch_with(backend, &requests, config.batch_size, config.max_in_flight);
    let mut chunks = Vec::with_capacity(requests.len());
    let mut calls = Vec::with_capacity(requests.len());
    for (i, (req, r)) in requests.iter().zip(outcome.responses).enumerate() {
        let resp = r.map_err(|e| backend_error(0, Stage::Independent, i, e))?;
        calls.push(BackendCall::new(Stage::Independent, i, req, &resp));
        chunks.push(resp.text);
    }
    Ok((IndependentTranslation::new(chunks), calls))
}

/// Runs the contextual schedule over an existing independent translation.
/// Returns the contextual translation, the calls made and the steps that
/// fell back to the independent chunk.
pub fn translate_contextual<B: InfillBackend + ?Sized>(
    source: &ChunkedSentence,
    independent: &IndependentTranslation,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<(ContextualTranslation, Vec<BackendCall>, Vec<usize>), EngineError> {
    if independent.chunks.len() != source.beta() {
        return Err(EngineError::Alignment {
            expected: source.beta(),
            found: independent.chunks.len(),
        });
    }
    let mut slot = Slot::new(0, "");
    slot.error = None;
    slot.source = TokenizedSentence {
        raw: String::new(),
        tokens: source.flatten(),
    };
    slot.chunked = Some(source.clone());
    slot.independent = independent.chunks.clone();
    let mut slots = vec![slot];
    run_contextual(backend, config, set, &mut slots)?;
    let slot = slots.pop().expect("one slot");
    if let Some(e) = slot.error {
        return Err(e);
    }
    Ok((
        ContextualTranslation::new(slot.contextual),
        slot.calls,
        slot.fallback_steps,
    ))
}

#[derive(Clone, Copy)]
enum AppendMode {
    Standard,
    Sap,
}

/// Step-synchronous append-back loop shared by SP and SAP.
fn run_append_back<B: InfillBackend + ?Sized>(
    sentences: &[&str],
    first_index: usize,
    group: usize,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
    mode: AppendMode,
) -> Result<Vec<Result<TranslationTrace, EngineError>>, EngineError> {
    if config.batch_size == 0 {
        return Err(EngineError::Config("batch size must be at least 1".into()));
    }
    let set = config.view(set)?;
    let mut slots: Vec<Slot> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| Slot::new(first_index + i, s))
        .collect();
    let limit = |slot: &Slot| match mode {
        AppendMode::Standard => config.sp_max_len.unwrap_or(2 * slot.source.len()).max(1),
        AppendMode::Sap => sap_budget(slot.source.len()),
    };
    let (stage, window) = match mode {
        AppendMode::Standard => (Stage::Standard, config.sp_window.max(1)),
        AppendMode::Sap => (Stage::Sap, 1),
    };
    let mut physical = 0;
    for step in 0.. {
        let mut requests = Vec::new();
        for (si, slot) in slots.iter_mut().enumerate() {
            if !slot.alive() || slot.done {
                continue;
            }
            let budget_left = match mode {
                AppendMode::Standard => slot.partial.len() < limit(slot),
                AppendMode::Sap => step < limit(slot),
            };
            if !budget_left {
                slot.done = true;
                slot.truncated = true;
                continue;
            }
            let prompt = render_standard_prompt(&set, &slot.source.normalized(), &slot.partial.join(" "));
            let id = format!("s{}-{}-{}", slot.index, stage, step);
            requests.push((si, step, InfillRequest::new(id, prompt.text, window)));
        }
        if requests.is_empty() {
            break;
        }
        physical += dispatch(backend, config, &mut slots, requests, stage, |s, _, resp| {
            if is_terminator(&resp.text) {
                s.done = true;
                return;
            }
            let words = resp.text.split_whitespace().filter(|w| *w != END_OF_SENTENCE);
            match mode {
                AppendMode::Standard => s.partial.extend(words.map(str::to_string)),
                AppendMode::Sap => s.partial.extend(words.take(1).map(str::to_string)),
            }
            if resp.text.contains(END_OF_SENTENCE) || resp.hit_stop {
                s.done = true;
            }
        });
        for slot in slots.iter_mut() {
            if let AppendMode::Standard = mode {
                let cap = limit(slot);
                if slot.alive() && slot.partial.len() > cap {
                    slot.partial.truncate(cap);
                    slot.truncated = true;
                    slot.done = true;
                }
            }
        }
    }
    let strategy = match mode {
        AppendMode::Standard => Strategy::Sp,
        AppendMode::Sap => Strategy::Sap,
    };
    let accounting = CallAccounting {
        group,
        group_size: sentences.len(),
        independent_calls: 0,
        contextual_calls: 0,
        generation_calls: physical,
    };
    Ok(finish(slots, strategy, 0, accounting))
}

pub fn sp_translate_group<B: InfillBackend + ?Sized>(
    sentences: &[&str],
    first_index: usize,
    group: usize,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<Vec<Result<TranslationTrace, EngineError>>, EngineError> {
    run_append_back(sentences, first_index, group, config, set, backend, AppendMode::Standard)
}

pub fn sap_translate_group<B: InfillBackend + ?Sized>(
    sentences: &[&str],
    first_index: usize,
    group: usize,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<Vec<Result<TranslationTrace, EngineError>>, EngineError> {
    run_append_back(sentences, first_index, group, config, set, backend, AppendMode::Sap)
}

/// Standard prompting with append-back. Generation ends on an empty span,
/// an end marker, a stop sequence, or once `max_len` output tokens exist
/// (the trace is then flagged as truncated).
pub fn sp_translate<B: InfillBackend + ?Sized>(
    sentence: &str,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
    max_len: Option<usize>,
) -> Result<TranslationTrace, EngineError> {
    let mut config = config.clone();
    if max_len.is_some() {
        config.sp_max_len = max_len;
    }
    sp_translate_group(&[sentence], 0, 0, &config, set, backend)?
        .pop()
        .expect("one trace per sentence")
}

/// Sequential autoregressive prompting: one token per call, at most
/// [`sap_budget`] calls.
pub fn sap_translate<B: InfillBackend + ?Sized>(
    sentence: &str,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<TranslationTrace, EngineError> {
    sap_translate_group(&[sentence], 0, 0, config, set, backend)?
        .pop()
        .expect("one trace per sentence")
}

/// Translates a corpus group by group under `strategy`.
pub fn translate_corpus<B: InfillBackend + ?Sized>(
    sentences: &[String],
    strategy: Strategy,
    config: &EngineConfig,
    set: &PromptTemplateSet,
    backend: &B,
) -> Result<Vec<Result<TranslationTrace, EngineError>>, EngineError> {
    let mut config = config.clone();
    match strategy {
        Strategy::Decomt => config.single_stage = false,
        Strategy::DecomtSingleStage => config.single_stage = true,
        Strategy::Sp | Strategy::Sap => {}
    }
    let mut out = Vec::with_capacity(sentences.len());
    for (group, batch) in sentences.chunks(config.sentences_per_group.max(1)).enumerate() {
        let refs: Vec<&str> = batch.iter().map(String::as_str).collect();
        let first = group * config.sentences_per_group.max(1);
        let traces = match strategy {
            Strategy::Decomt | Strategy::DecomtSingleStage => {
                decomt_translate_group(&refs, first, group, &config, set, backend)?
            }
            Strategy::Sp => sp_translate_group(&refs, first, group, &config, set, backend)?,
            Strategy::Sap => sap_translate_group(&refs, first, group, &config, set, backend)?,
        };
        out.extend(traces);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Counted, FnBackend, MockBackend};
    use crate::templates::load_template_set;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    fn set() -> PromptTemplateSet {
        load_template_set(
            "source_lang: Src\ntarget_lang: Tgt\nS: a b\nT: A B\nS: c\nT: C\n\n== full ==\nS: a b c\nT: A B C\n",
        )
        .unwrap()
    }

    fn upper() -> MockBackend {
        MockBackend::new(
            (0..60)
                .map(|i| (format!("w{i}"), format!("W{i}")))
                .collect(),
        )
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn cfg(m: usize) -> EngineConfig {
        EngineConfig::default().with_m(m)
    }

    #[test]
    fn schedule_shapes() {
        assert!(contextual_schedule(1).is_empty());
        let two = contextual_schedule(2);
        assert_eq!(two[0], ContextualStep { target: 0, window: 0..2, prev_contextual: None, next_independent: Some(1) });
        assert_eq!(two[1], ContextualStep { target: 1, window: 0..2, prev_contextual: Some(0), next_independent: None });
        let five = contextual_schedule(5);
        assert_eq!(five[2].window, 1..4);
        assert_eq!(five[4].window, 3..5);
    }

    #[test]
    fn four_chunks_make_four_independent_requests() {
        let backend = upper();
        let trace = decomt_translate(&words(20), &cfg(5), &set(), &backend).unwrap();
        assert_eq!(trace.calls_in_stage(Stage::Independent), 4);
        assert_eq!(trace.calls_in_stage(Stage::Contextual), 4);
        let ind = trace.independent.as_ref().unwrap();
        assert_eq!(ind.chunks[3], "W15 W16 W17 W18 W19");
        assert_eq!(trace.output, backend.map_text(&words(20)));
    }

    #[test]
    fn single_chunk_skips_contextual_stage() {
        let backend = Counted::new(upper());
        let trace = decomt_translate(&words(3), &cfg(4), &set(), &backend).unwrap();
        assert_eq!(trace.calls_in_stage(Stage::Independent), 1);
        assert_eq!(trace.calls_in_stage(Stage::Contextual), 0);
        assert_eq!(trace.contextual.as_ref().unwrap().chunks, trace.independent.as_ref().unwrap().chunks);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn single_stage_has_no_contextual_calls() {
        let mut c = cfg(3);
        c.single_stage = true;
        let trace = decomt_translate(&words(10), &c, &set(), &upper()).unwrap();
        assert_eq!(trace.strategy, Strategy::DecomtSingleStage);
        assert_eq!(trace.calls_in_stage(Stage::Contextual), 0);
        assert!(trace.contextual.is_none());
        assert_eq!(trace.output, trace.independent.unwrap().assembled);
    }

    #[test]
    fn empty_contextual_infill_falls_back() {
        let mock = upper();
        let backend = FnBackend::new(move |r: &InfillRequest| {
            if r.request_id.ends_with("ctx-1") {
                Ok(String::new())
            } else {
                mock.respond(r)
            }
        });
        let trace = decomt_translate(&words(9), &cfg(3), &set(), &backend).unwrap();
        assert_eq!(trace.fallback_steps, vec![1]);
        assert_eq!(trace.contextual.as_ref().unwrap().chunks[1], "W3 W4 W5");
    }

    #[test]
    fn backend_errors_carry_position() {
        let backend = FnBackend::new(|r: &InfillRequest| {
            if r.request_id == "s0-ind-2" {
                Err(BackendError::Remote("down".into()))
            } else {
                Ok("x".into())
            }
        });
        let err = decomt_translate(&words(9), &cfg(3), &set(), &backend).unwrap_err();
        assert!(matches!(err, EngineError::Backend { stage: Stage::Independent, index: 2, .. }));
    }

    #[test]
    fn contextual_rejects_misaligned_input() {
        let chunked = segment(&tokenize(&words(6)), 3).unwrap();
        let ind = IndependentTranslation::new(vec!["x".into()]);
        let err = translate_contextual(&chunked, &ind, &cfg(3), &set(), &upper()).unwrap_err();
        assert_eq!(err, EngineError::Alignment { expected: 2, found: 1 });
    }

    #[test]
    fn two_stage_building_blocks_compose() {
        let backend = upper();
        let chunked = segment(&tokenize(&words(11)), 4).unwrap();
        let (ind, calls) = translate_independent(&chunked, &cfg(4), &set(), &backend).unwrap();
        assert_eq!(calls.len(), 3);
        let (ctx, calls, fallbacks) = translate_contextual(&chunked, &ind, &cfg(4), &set(), &backend).unwrap();
        assert_eq!(calls.len(), 3);
        assert!(fallbacks.is_empty());
        assert_eq!(ctx.assembled, backend.map_text(&words(11)));
    }

    #[test]
    fn m_outside_allowed_set_rejected() {
        assert!(matches!(
            decomt_translate("a b", &cfg(7), &set(), &upper()),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn empty_sentence_is_an_error() {
        assert!(matches!(
            decomt_translate("   ", &cfg(3), &set(), &upper()),
            Err(EngineError::Chunk(ChunkError::EmptySentence))
        ));
    }

    #[test]
    fn sp_full_target_then_empty() {
        let backend = FnBackend::new(|r: &InfillRequest| {
            Ok(if r.prompt.ends_with("Tgt: ⟨mask⟩") { "A B C".into() } else { String::new() })
        });
        let t = sp_translate("a b c", &cfg(3), &set(), &backend, None).unwrap();
        assert_eq!(t.backend_calls.len(), 2);
        assert_eq!(t.output, "A B C");
        assert!(!t.truncated);
    }

    #[test]
    fn sp_three_tokens_per_call() {
        let mut c = cfg(3);
        c.sp_window = 3;
        let t = sp_translate(&words(9), &c, &set(), &upper(), None).unwrap();
        assert!((3..=4).contains(&t.backend_calls.len()));
        assert_eq!(t.output, upper().map_text(&words(9)));
    }

    #[test]
    fn sp_max_len_guard() {
        let backend = FnBackend::new(|_: &InfillRequest| Ok("la la".to_string()));
        let t = sp_translate("a b", &cfg(3), &set(), &backend, Some(5)).unwrap();
        assert!(t.truncated);
        assert_eq!(t.output.split_whitespace().count(), 5);
    }

    #[test]
    fn sap_budget_rule() {
        assert_eq!(sap_budget(41), 61);
        assert_eq!(sap_budget(2), 3);
        let backend = Counted::new(FnBackend::new(|_: &InfillRequest| Ok("tok".to_string())));
        let t = sap_translate("a b", &cfg(3), &set(), &backend).unwrap();
        assert_eq!(t.backend_calls.len(), 3);
        assert!(t.truncated);
    }

    #[test]
    fn sap_stops_at_terminator() {
        let backend = FnBackend::new(|r: &InfillRequest| {
            let step: usize = r.request_id.rsplit('-').next().unwrap().parse().unwrap();
            Ok(if step == 4 { END_OF_SENTENCE.to_string() } else { format!("t{step} extra") })
        });
        let t = sap_translate(&words(20), &cfg(3), &set(), &backend).unwrap();
        assert_eq!(t.backend_calls.len(), 5);
        assert_eq!(t.output, "t0 t1 t2 t3");
        assert!(!t.truncated);
    }

    #[test]
    fn sap_with_mock_reproduces_lexicon() {
        let t = sap_translate(&words(7), &cfg(3), &set(), &upper()).unwrap();
        assert_eq!(t.output, upper().map_text(&words(7)));
        assert_eq!(t.backend_calls.len(), 8);
    }

    #[test]
    fn corpus_groups_and_indices() {
        let sentences: Vec<String> = (1..=11).map(words).collect();
        let mut c = cfg(3);
        c.sentences_per_group = 4;
        let traces = translate_corpus(&sentences, Strategy::Decomt, &c, &set(), &upper()).unwrap();
        let idx: Vec<usize> = traces.iter().map(|t| t.as_ref().unwrap().sentence_index).collect();
        assert_eq!(idx, (0..11).collect::<Vec<_>>());
        assert_eq!(traces[9].as_ref().unwrap().accounting.group, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn traces_are_aligned_and_deterministic(n in 1usize..40, m in 3usize..=5) {
            let backend = upper();
            let a = decomt_translate(&words(n), &cfg(m), &set(), &backend).unwrap();
            let b = decomt_translate(&words(n), &cfg(m), &set(), &backend).unwrap();
            prop_assert_eq!(&a, &b);
            let beta = n.div_ceil(m);
            prop_assert_eq!(a.independent.as_ref().unwrap().chunks.len(), beta);
            prop_assert_eq!(a.contextual.as_ref().unwrap().chunks.len(), beta);
            prop_assert_eq!(a.calls_in_stage(Stage::Contextual), if beta >= 2 { beta } else { 0 });
            // every response fills exactly one chunk slot
            let ind = &a.independent.as_ref().unwrap().chunks;
            let ctx = &a.contextual.as_ref().unwrap().chunks;
            for call in &a.backend_calls {
                let slot = match call.stage {
                    Stage::Independent => &ind[call.step],
                    Stage::Contextual => &ctx[call.step],
                    _ => unreachable!(),
                };
                prop_assert_eq!(slot, &call.response);
            }
        }
    }
}
