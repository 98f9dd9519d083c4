//! Wire format for remote infill services.
//!
//! One physical call is one TCP connection carrying one line of UTF-8 JSON
//! each way:
//!
//! ```text
//! -> {"requests":[{"request_id":"s0-ind-0","prompt":"...<extra_id_0>","mask_sentinel":"<extra_id_0>","max_new_tokens":8,"stop":["\n"]}]}
//! <- {"responses":[{"request_id":"s0-ind-0","text":"..."}]}
//! ```
//!
//! Responses may arrive in any order and are matched by `request_id`. A
//! response with `error` set fails only that request.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: String,
    pub prompt: String,
    pub mask_sentinel: String,
    pub max_new_tokens: usize,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMessage {
    pub requests: Vec<WireRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMessage {
    pub responses: Vec<WireResponse>,
}
