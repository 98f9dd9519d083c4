use super::wire::{RequestMessage, ResponseMessage, WireRequest};
use super::{BackendConfig, BackendError, InfillBackend, InfillRequest, RawResult};
use crate::templates::MASK;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

const BACKOFF_BASE_MS: u64 = 50;
const BACKOFF_CAP_MS: u64 = 5_000;

/// Client for an infill service speaking the [`wire`](super::wire) protocol.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: BackendConfig,
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn address(&self) -> &str {
        self.config
            .endpoint
            .strip_prefix("tcp://")
            .unwrap_or(&self.config.endpoint)
    }

    fn exchange(&self, line: &str) -> Result<String, String> {
        let timeout = Duration::from_millis(self.config.timeout_ms.max(1));
        let addr = self
            .address()
            .to_socket_addrs()
            .map_err(|e| format!("resolve {}: {e}", self.address()))?
            .next()
            .ok_or_else(|| format!("no address for {}", self.address()))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
        stream.set_write_timeout(Some(timeout)).map_err(|e| e.to_string())?;
        stream.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
        stream.write_all(b"\n").map_err(|e| e.to_string())?;
        stream.flush().map_err(|e| e.to_string())?;
        let mut reply = String::new();
        let n = BufReader::new(stream)
            .read_line(&mut reply)
            .map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("connection closed before a response line".to_string());
        }
        Ok(reply)
    }

    fn exchange_with_retries(&self, line: &str) -> Result<String, BackendError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = (BACKOFF_BASE_MS << (attempt - 1).min(16)).min(BACKOFF_CAP_MS);
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.exchange(line) {
                Ok(reply) => return Ok(reply),
                Err(e) => last = e,
            }
        }
        Err(BackendError::Transport {
            message: last,
            attempts,
        })
    }
}

impl InfillBackend for RemoteBackend {
    fn call(&self, requests: &[InfillRequest]) -> Vec<RawResult> {
        let message = RequestMessage {
            requests: requests
                .iter()
                .map(|r| WireRequest {
                    request_id: r.request_id.clone(),
                    prompt: r.prompt.replace(MASK, &self.config.mask_sentinel),
                    mask_sentinel: self.config.mask_sentinel.clone(),
                    max_new_tokens: r.max_new_tokens,
                    stop: r.stop_sequences.clone(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&message).expect("request serializes");
        let reply = match self.exchange_with_retries(&line) {
            Ok(reply) => reply,
            Err(e) => return vec![Err(e); requests.len()],
        };
        let parsed: ResponseMessage = match serde_json::from_str(reply.trim_end()) {
            Ok(p) => p,
            Err(e) => {
                let err = BackendError::Protocol(format!("unparsable response: {e}"));
                return vec![Err(err); requests.len()];
            }
        };
        let mut by_id: HashMap<String, _> = parsed
            .responses
            .into_iter()
            .map(|r| (r.request_id.clone(), r))
            .collect();
        requests
            .iter()
            .map(|r| match by_id.remove(&r.request_id) {
                Some(resp) => match resp.error {
                    Some(e) => Err(BackendError::Remote(e)),
                    None => Ok(resp.text),
                },
                None => Err(BackendError::Protocol(format!(
                    "no response for request {}",
                    r.request_id
                ))),
            })
            .collect()
    }

    fn sentinel(&self) -> &str {
        &self.config.mask_sentinel
    }

    fn describe(&self) -> String {
        format!("remote({})", self.config.endpoint)
    }
}
