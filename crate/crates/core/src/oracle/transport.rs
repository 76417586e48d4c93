use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Network(String),
    #[error("missing credentials: environment variable `{0}` is not set")]
    MissingToken(String),
}

/// Sends one JSON POST and returns the decoded JSON response.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Json) -> Result<Json, TransportError>;
}

/// Plain HTTPS client. The bearer token is read from the named environment
/// variable on every request and never stored or logged.
pub struct HttpTransport {
    endpoint: String,
    token_env: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("endpoint", &self.endpoint)
            .field("token_env", &self.token_env)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, token_env: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token_env,
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Json) -> Result<Json, TransportError> {
        let url = format!("{}{}", self.endpoint.trim_end_matches('/'), path);
        log::debug!("POST {url}");
        let mut request = self.agent.post(&url);
        if let Some(var) = &self.token_env {
            let token =
                std::env::var(var).map_err(|_| TransportError::MissingToken(var.clone()))?;
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        request
            .send_json(body)
            .and_then(|mut r| r.body_mut().read_json::<Json>())
            .map_err(|e| TransportError::Network(e.to_string()))
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RecordedReply {
    /// Served when the concatenated message contents contain this text.
    /// Empty matches everything.
    #[serde(default)]
    pub contains: String,
    pub reply: String,
}

#[derive(Debug, Deserialize)]
struct Recording {
    replies: Vec<RecordedReply>,
    #[serde(default)]
    fail_first: usize,
}

/// Offline transport serving canned chat replies, matched by message
/// content so concurrent callers get deterministic answers. Captures every
/// request body it sees.
#[derive(Debug, Default)]
pub struct RecordedTransport {
    replies: Vec<RecordedReply>,
    failures_left: AtomicUsize,
    requests: Mutex<Vec<Json>>,
}

impl RecordedTransport {
    pub fn new(replies: Vec<RecordedReply>) -> Self {
        Self {
            replies,
            ..Default::default()
        }
    }

    /// Load `{"replies": [{"contains": ..., "reply": ...}], "fail_first": n}`.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rec: Recording = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let t = Self::new(rec.replies);
        t.failures_left.store(rec.fail_first, Ordering::SeqCst);
        Ok(t)
    }

    /// Fail the next `n` requests with a network error.
    pub fn failing_first(self, n: usize) -> Self {
        self.failures_left.store(n, Ordering::SeqCst);
        self
    }

    pub fn requests(&self) -> Vec<Json> {
        self.requests.lock().expect("request log poisoned").clone()
    }
}

impl Transport for RecordedTransport {
    fn post(&self, _path: &str, body: &Json) -> Result<Json, TransportError> {
        self.requests
            .lock()
            .expect("request log poisoned")
            .push(body.clone());
        let failing = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(TransportError::Network("simulated outage".into()));
        }
        let content: String = body["messages"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|m| m["content"].as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let reply = self
            .replies
            .iter()
            .find(|r| content.contains(&r.contains))
            .ok_or_else(|| TransportError::Network("no recorded reply matches".into()))?;
        Ok(json!({"choices": [{"message": {"role": "assistant", "content": reply.reply}}]}))
    }
}
