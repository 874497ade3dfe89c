//! Minimal HTTP/1.1 message framing: `Content-Length` bodies, keep-alive,
//! no chunked transfer coding.

use thiserror::Error;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt};

pub const MAX_HEAD: usize = 16 * 1024;
pub const MAX_BODY: usize = 1024 * 1024;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("message head exceeds {MAX_HEAD} bytes")]
    HeadTooLarge,
    #[error("body of {0} bytes exceeds {MAX_BODY}")]
    BodyTooLarge(usize),
    #[error("connection closed mid-message")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    /// Request line or status line.
    pub start: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Message {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// HTTP/1.1 defaults to persistent connections.
    pub fn keep_alive(&self) -> bool {
        match self.header("connection") {
            Some(v) => !v.eq_ignore_ascii_case("close"),
            None => !self.start.ends_with("HTTP/1.0"),
        }
    }

    /// `(method, target)` of a request line.
    pub fn request_line(&self) -> Result<(&str, &str), HttpError> {
        let mut parts = self.start.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(t), Some(v)) if v.starts_with("HTTP/1.") => Ok((m, t)),
            _ => Err(HttpError::Malformed(format!("request line {:?}", self.start))),
        }
    }

    pub fn status_code(&self) -> Result<u16, HttpError> {
        self.start
            .split(' ')
            .nth(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| HttpError::Malformed(format!("status line {:?}", self.start)))
    }
}

/// Reads one message. `Ok(None)` is a clean close before any byte of it.
pub async fn read_message<R: AsyncBufRead + Unpin>(r: &mut R) -> Result<Option<Message>, HttpError> {
    let mut line = Vec::new();
    let mut head_len = 0;
    let mut start = None;
    let mut headers = Vec::new();
    loop {
        line.clear();
        let n = r.read_until(b'\n', &mut line).await?;
        if n == 0 {
            return if start.is_none() && head_len == 0 {
                Ok(None)
            } else {
                Err(HttpError::Truncated)
            };
        }
        if line.last() != Some(&b'\n') {
            return Err(HttpError::Truncated);
        }
        head_len += n;
        if head_len > MAX_HEAD {
            return Err(HttpError::HeadTooLarge);
        }
        let text = std::str::from_utf8(&line)
            .map_err(|_| HttpError::Malformed("non-UTF-8 head".into()))?
            .trim_end_matches(['\r', '\n']);
        if start.is_none() {
            if text.is_empty() {
                // tolerate stray CRLF between messages
                continue;
            }
            start = Some(text.to_string());
            continue;
        }
        if text.is_empty() {
            break;
        }
        let (k, v) = text
            .split_once(':')
            .ok_or_else(|| HttpError::Malformed(format!("header {text:?}")))?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut msg = Message {
        start: start.expect("start line read"),
        headers,
        body: Vec::new(),
    };
    if msg
        .header("transfer-encoding")
        .is_some_and(|v| !v.eq_ignore_ascii_case("identity"))
    {
        return Err(HttpError::Malformed("transfer-encoding is not supported".into()));
    }
    let len = match msg.header("content-length") {
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| HttpError::Malformed(format!("content-length {v:?}")))?,
        None => 0,
    };
    if len > MAX_BODY {
        return Err(HttpError::BodyTooLarge(len));
    }
    msg.body.resize(len, 0);
    r.read_exact(&mut msg.body).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => HttpError::Truncated,
        _ => HttpError::Io(e),
    })?;
    Ok(Some(msg))
}

pub fn reason_phrase(code: u16) -> &'static str {
    match code {
        200 => "OK",
        201 => "Created",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        413 => "Payload Too Large",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        504 => "Gateway Timeout",
        _ => "Unknown",
    }
}

pub fn write_response(out: &mut Vec<u8>, code: u16, body: &[u8], keep_alive: bool) {
    out.extend_from_slice(
        format!(
            "HTTP/1.1 {code} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: {}\r\n\r\n",
            reason_phrase(code),
            body.len(),
            if keep_alive { "keep-alive" } else { "close" }
        )
        .as_bytes(),
    );
    out.extend_from_slice(body);
}

pub fn write_request(out: &mut Vec<u8>, method: &str, target: &str, body: &[u8]) {
    out.extend_from_slice(format!("{method} {target} HTTP/1.1\r\nHost: offload\r\n").as_bytes());
    if !body.is_empty() || method == "POST" {
        out.extend_from_slice(
            format!("Content-Type: application/json\r\nContent-Length: {}\r\n", body.len()).as_bytes(),
        );
    }
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(body);
}
