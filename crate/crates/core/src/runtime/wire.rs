//! Response bodies of the HTTP interface. The simulator counts the same bytes
//! the live server sends.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::Serialize;

use crate::domain::{ConfigKey, Status};
use crate::loadgen::Op;
use crate::orchestration::Completion;

pub const NOT_FOUND_BODY: &[u8] = br#"{"error":"not found"}"#;

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: Status,
    reason: &'a str,
}

fn error_body(c: &Completion) -> Vec<u8> {
    serde_json::to_vec(&ErrorBody {
        status: c.status,
        reason: c.reason.as_deref().unwrap_or(""),
    })
    .expect("error body serializes")
}

/// HTTP status and body answering `op` with completion `c`.
pub fn render_response(op: Op, c: &Completion) -> (u16, Vec<u8>) {
    match (op, c.status) {
        (Op::Read, Status::Ok) => match &c.record {
            Some(rec) => (200, serde_json::to_vec(rec).expect("record serializes")),
            None => (404, NOT_FOUND_BODY.to_vec()),
        },
        (Op::Write, Status::Ok) => match &c.record {
            Some(rec) => (201, serde_json::to_vec(rec).expect("record serializes")),
            None => (500, error_body(c)),
        },
        (Op::Read | Op::Write, status) => (status.http_code(), error_body(c)),
        (Op::Estimate, status) => (status.http_code(), c.envelope().to_json_sized()),
    }
}

pub fn encode_key(key: &ConfigKey) -> String {
    URL_SAFE_NO_PAD.encode(serde_json::to_vec(key).expect("key serializes"))
}

pub fn decode_key(text: &str) -> Result<ConfigKey, String> {
    let bytes = URL_SAFE_NO_PAD
        .decode(text.trim_end_matches('='))
        .map_err(|e| format!("key is not url-safe base64: {e}"))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("key is not a ConfigKey: {e}"))
}
