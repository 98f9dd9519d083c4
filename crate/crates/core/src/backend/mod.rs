//! The language-model boundary: one prompt with one masked span in, the
//! infilled span out.
//!
//! Backends only execute *physical calls*, each covering a group of
//! requests. Validation, batching and output post-processing live here so
//! every backend gets identical semantics.

mod mock;
mod remote;
mod server;
pub mod wire;

pub use mock::{FnBackend, MockBackend};
pub use remote::RemoteBackend;
pub use server::{serve, serve_connection};

use crate::templates::MASK;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request {request_id}: prompt must contain exactly one mask placeholder, found {found}")]
    MaskCount { request_id: String, found: usize },
    #[error("cannot locate the test block in the prompt: {0}")]
    PromptShape(String),
    #[error("backend reported an error: {0}")]
    Remote(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillRequest {
    pub request_id: String,
    pub prompt: String,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl InfillRequest {
    /// A request that stops at the end of the target line.
    pub fn new(request_id: impl Into<String>, prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        Self {
            request_id: request_id.into(),
            prompt: prompt.into(),
            max_new_tokens: max_new_tokens.max(1),
            stop_sequences: vec!["\n".to_string()],
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let found = self.prompt.matches(MASK).count();
        if found != 1 {
            return Err(BackendError::MaskCount {
                request_id: self.request_id.clone(),
                found,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillResponse {
    pub request_id: String,
    /// The predicted span after post-processing.
    pub text: String,
    /// Backend output as received.
    pub raw: String,
    /// Whether a stop sequence cut the output.
    pub hit_stop: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub mask_sentinel: String,
    pub batch_size: usize,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Physical calls allowed in flight at once within one batch submission.
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "127.0.0.1:7878".to_string(),
            mask_sentinel: "<extra_id_0>".to_string(),
            batch_size: 8,
            timeout_ms: 60_000,
            retries: 3,
            max_in_flight: 1,
        }
    }
}

impl BackendConfig {
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// Raw output for one request of a physical call.
pub type RawResult = Result<String, BackendError>;

/// A language model reachable through masked-span infilling.
pub trait InfillBackend: Send + Sync {
    /// Executes one physical call. The result vector is aligned with
    /// `requests`. Prompts carry the [`MASK`] placeholder; backends map it
    /// to their own sentinel.
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult>;

    /// The sentinel this backend may echo back in its output.
    fn sentinel(&self) -> &str {
        MASK
    }

    fn describe(&self) -> String;
}

impl<B: InfillBackend + ?Sized> InfillBackend for &B {
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        (**self).call(requests)
    }
    fn sentinel(&self) -> &str {
        (**self).sentinel()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: InfillBackend + ?Sized> InfillBackend for Box<B> {
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        (**self).call(requests)
    }
    fn sentinel(&self) -> &str {
        (**self).sentinel()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Wraps a backend and counts physical calls.
pub struct Counted<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> Counted<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: InfillBackend> InfillBackend for Counted<B> {
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.call(requests)
    }
    fn sentinel(&self) -> &str {
        self.inner.sentinel()
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Strips the sentinel, cuts at the first stop sequence and trims.
/// Returns the span and whether a stop sequence was hit.
pub fn postprocess(raw: &str, sentinel: &str, stop_sequences: &[String]) -> (String, bool) {
    let mut text = raw.replace(MASK, " ");
    if !sentinel.is_empty() {
        text = text.replace(sentinel, " ");
    }
    let text = text.trim_start();
    let cut = stop_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(at) => (text[..at].trim().to_string(), true),
        None => (text.trim().to_string(), false),
    }
}

/// Outcome of submitting many requests.
#[derive(Debug)]
pub struct BatchOutcome {
    pub responses: Vec<Result<InfillResponse, BackendError>>,
    pub physical_calls: usize,
}

/// Sends a single request as its own physical call.
pub fn infill<B: InfillBackend + ?Sized>(
    backend: &B,
    request: &InfillRequest,
) -> Result<InfillResponse, BackendError> {
    let mut out = infill_batch(backend, std::slice::from_ref(request), 1);
    out.responses.pop().expect("one response per request")
}

/// Groups requests into physical calls of at most `batch_size`. Responses
/// come back in input order; failures are attributed to single requests.
pub fn infill_batch<B: InfillBackend + ?Sized>(
    backend: &B,
    requests: &[InfillRequest],
    batch_size: usize,
) -> BatchOutcome {
    infill_batch_with(backend, requests, batch_size, 1)
}

pub fn infill_batch_with<B: InfillBackend + ?Sized>(
    backend: &B,
    requests: &[InfillRequest],
    batch_size: usize,
    max_in_flight: usize,
) -> BatchOutcome {
    let batch_size = batch_size.max(1);
    let mut responses: Vec<Option<Result<InfillResponse, BackendError>>> =
        vec![None; requests.len()];
    let mut valid = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        match req.validate() {
            Ok(()) => valid.push(i),
            Err(e) => responses[i] = Some(Err(e)),
        }
    }

    let groups: Vec<&[usize]> = valid.chunks(batch_size).collect();
    let run = |group: &[usize]| -> Vec<(usize, Result<InfillResponse, BackendError>)> {
        let batch: Vec<InfillRequest> = group.iter().map(|&i| requests[i].clone()).collect();
        let start = Instant::now();
        let raws = backend.call(&batch);
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        let mut raws = raws.into_iter();
        group
            .iter()
            .zip(batch.iter())
            .map(|(&i, req)| {
                let result = match raws.next() {
                    Some(Ok(raw)) => {
                        let (text, hit_stop) =
                            postprocess(&raw, backend.sentinel(), &req.stop_sequences);
                        Ok(InfillResponse {
                            request_id: req.request_id.clone(),
                            text,
                            raw,
                            hit_stop,
                            latency_ms,
                        })
                    }
                    Some(Err(e)) => Err(e),
                    None => Err(BackendError::Protocol(format!(
                        "backend returned no result for {}",
                        req.request_id
                    ))),
                };
                (i, result)
            })
            .collect()
    };

    let max_in_flight = max_in_flight.max(1);
    for wave in groups.chunks(max_in_flight) {
        let results: Vec<_> = if wave.len() == 1 {
            vec![run(wave[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave.iter().map(|g| scope.spawn(|| run(g))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("backend call panicked"))
                    .collect()
            })
        };
        for (i, r) in results.into_iter().flatten() {
            responses[i] = Some(r);
        }
    }

    BatchOutcome {
        responses: responses
            .into_iter()
            .map(|r| r.expect("every request resolved"))
            .collect(),
        physical_calls: groups.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(id: usize) -> InfillRequest {
        InfillRequest::new(format!("r{id}"), format!("Translate from A to B:\nA: w{id}\nB: {MASK}"), 4)
    }

    #[test]
    fn postprocess_rules() {
        let stops = vec!["\n".to_string()];
        assert_eq!(postprocess("cat black\nnext", MASK, &stops), ("cat black".into(), true));
        assert_eq!(
            postprocess("<extra_id_0> kucing <extra_id_0>", "<extra_id_0>", &stops),
            ("kucing".into(), false)
        );
        assert_eq!(postprocess("  padded  ", MASK, &[]), ("padded".into(), false));
        assert_eq!(postprocess("\n\nlate", MASK, &stops), ("late".into(), false));
    }

    #[test]
    fn zero_placeholders_rejected_client_side() {
        let backend = Counted::new(MockBackend::default());
        let bad = InfillRequest::new("x", "A: a\nB: ", 4);
        let err = infill(&backend, &bad).unwrap_err();
        assert_eq!(
            err,
            BackendError::MaskCount {
                request_id: "x".into(),
                found: 0
            }
        );
        assert_eq!(backend.calls(), 0);
        let two = InfillRequest::new("y", format!("{MASK} {MASK}"), 4);
        assert!(matches!(infill(&backend, &two), Err(BackendError::MaskCount { found: 2, .. })));
    }

    #[test]
    fn batch_call_counts() {
        let backend = Counted::new(MockBackend::default());
        let reqs: Vec<_> = (0..36).map(req).collect();
        let out = infill_batch(&backend, &reqs, 8);
        assert_eq!(out.physical_calls, 5);
        assert_eq!(backend.calls(), 5);
        assert_eq!(infill_batch(&backend, &reqs[..1], 8).physical_calls, 1);
        let empty = infill_batch(&backend, &[], 8);
        assert_eq!(empty.physical_calls, 0);
        assert!(empty.responses.is_empty());
    }

    #[test]
    fn failures_stay_with_their_request() {
        let backend = FnBackend::new(|r: &InfillRequest| {
            if r.request_id == "r3" {
                Err(BackendError::Remote("boom".into()))
            } else {
                Ok(r.request_id.to_uppercase())
            }
        });
        let reqs: Vec<_> = (0..6).map(req).collect();
        let out = infill_batch(&backend, &reqs, 4);
        for (i, r) in out.responses.iter().enumerate() {
            if i == 3 {
                assert!(r.is_err());
            } else {
                assert_eq!(r.as_ref().unwrap().text, format!("R{i}"));
            }
        }
    }

    #[test]
    fn concurrent_waves_preserve_order() {
        let backend = FnBackend::new(|r: &InfillRequest| {
            let n: u64 = r.request_id[1..].parse().unwrap();
            std::thread::sleep(std::time::Duration::from_millis((20 - n % 20) / 4));
            Ok(r.request_id.clone())
        });
        let reqs: Vec<_> = (0..40).map(req).collect();
        let out = infill_batch_with(&backend, &reqs, 3, 4);
        assert_eq!(out.physical_calls, 14);
        let ids: Vec<_> = out.responses.iter().map(|r| r.as_ref().unwrap().text.clone()).collect();
        let want: Vec<_> = (0..40).map(|i| format!("r{i}")).collect();
        assert_eq!(ids, want);
    }

    proptest! {
        #[test]
        fn physical_calls_are_ceiling(n in 0usize..100, batch in 1usize..16) {
            let backend = Counted::new(MockBackend::default());
            let reqs: Vec<_> = (0..n).map(req).collect();
            let out = infill_batch(&backend, &reqs, batch);
            prop_assert_eq!(out.physical_calls, n.div_ceil(batch));
            prop_assert_eq!(backend.calls(), n.div_ceil(batch));
            let ids: Vec<_> = out.responses.iter().map(|r| r.as_ref().unwrap().request_id.clone()).collect();
            let want: Vec<_> = reqs.iter().map(|r| r.request_id.clone()).collect();
            prop_assert_eq!(ids, want);
        }
    }
}
