//! HTTP scorer speaking a small JSON protocol:
//!
//! ```text
//! POST {"model": str, "items": [{"input": str, "candidates": [str, ...]}]}
//!   -> {"results": [{"scores": [float, ...]}]}
//! ```
//!
//! Scores are natural-log likelihoods aligned with the candidates.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::backend::{Capabilities, ScoreRequest, ScorerBackend};
use crate::error::{Error, Result};

const EXCERPT_LEN: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub token: Option<String>,
    pub max_batch: usize,
    pub per_token: bool,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token: None,
            max_batch: 16,
            per_token: false,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    retries: AtomicUsize,
}

#[derive(Serialize)]
struct WireItem<'a> {
    input: &'a str,
    candidates: &'a [String],
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    items: Vec<WireItem<'a>>,
}

enum Attempt {
    Retryable(String),
    Fatal(Error),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.max_batch == 0 {
            return Err(Error::InvalidInput("max_batch must be at least 1".into()));
        }
        if config.retry.attempts == 0 {
            return Err(Error::InvalidInput("retry attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            config,
            client,
            retries: AtomicUsize::new(0),
        })
    }

    /// Retries performed so far, across all calls.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    fn post(&self, body: &str) -> std::result::Result<String, Attempt> {
        let mut request = self
            .client
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = &self.config.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Attempt::Retryable(e.to_string()))?;
        if status.is_server_error() {
            return Err(Attempt::Retryable(format!("HTTP {status}: {}", excerpt(&text))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Transport(format!(
                "HTTP {status}: {}",
                excerpt(&text)
            ))));
        }
        Ok(text)
    }

    fn send_chunk(&self, chunk: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::to_string(&WireRequest {
            model: &self.config.model,
            items: chunk
                .iter()
                .map(|r| WireItem {
                    input: &r.input,
                    candidates: &r.candidates,
                })
                .collect(),
        })
        .map_err(|e| Error::Invariant(e.to_string()))?;

        let mut backoff = self.config.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.retry.attempts {
            match self.post(&body) {
                Ok(text) => return parse_response(&text, chunk),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => {
                    last = msg;
                    if attempt < self.config.retry.attempts {
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        log::warn!(
                            "scorer request failed (attempt {attempt}/{}): {last}; retrying in {:?}",
                            self.config.retry.attempts,
                            backoff
                        );
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(Error::Transport(format!(
            "giving up after {} attempts: {last}",
            self.config.retry.attempts
        )))
    }
}

impl ScorerBackend for RemoteBackend {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_batch: self.config.max_batch,
            per_token: self.config.per_token,
        }
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.config.max_batch) {
            out.extend(self.send_chunk(chunk)?);
        }
        Ok(out)
    }
}

/// Validates a response body against the items that were sent.
pub fn parse_response(text: &str, items: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
    let violation = |message: String| Error::Protocol {
        message,
        excerpt: excerpt(text),
    };
    let value: Value = serde_json::from_str(text).map_err(|e| violation(format!("invalid JSON: {e}")))?;
    let results = value
        .get("results")
        .and_then(Value::as_array)
        .ok_or_else(|| violation("missing `results` array".into()))?;
    if results.len() != items.len() {
        return Err(violation(format!(
            "expected {} results, got {}",
            items.len(),
            results.len()
        )));
    }
    results
        .iter()
        .zip(items)
        .enumerate()
        .map(|(idx, (result, item))| {
            let scores = result
                .get("scores")
                .and_then(Value::as_array)
                .ok_or_else(|| violation(format!("result {idx} has no `scores` array")))?;
            if scores.len() != item.candidates.len() {
                return Err(violation(format!(
                    "result {idx} has {} scores for {} candidates",
                    scores.len(),
                    item.candidates.len()
                )));
            }
            scores
                .iter()
                .enumerate()
                .map(|(j, s)| match s.as_f64() {
                    Some(v) if v.is_finite() => Ok(v),
                    _ => Err(violation(format!("result {idx} score {j} is not a finite number: {s}"))),
                })
                .collect()
        })
        .collect()
}

fn excerpt(text: &str) -> String {
    match text.char_indices().nth(EXCERPT_LEN) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(n: usize) -> ScoreRequest {
        ScoreRequest {
            prompt_id: "p".into(),
            example_id: "x".into(),
            input: "in".into(),
            candidates: (0..n).map(|j| format!("c{j}")).collect(),
            labels: Vec::new(),
        }
    }

    #[test]
    fn happy_path() {
        let scores = parse_response(r#"{"results":[{"scores":[-1.2,-3.4]}]}"#, &[item(2)]).unwrap();
        assert_eq!(scores, vec![vec![-1.2, -3.4]]);
    }

    #[test]
    fn null_score_is_a_violation() {
        let err = parse_response(r#"{"results":[{"scores":[null,-3.4]}]}"#, &[item(2)]).unwrap_err();
        match err {
            Error::Protocol { excerpt, .. } => assert!(excerpt.contains("null")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_violations() {
        assert!(parse_response(r#"{"results":[]}"#, &[item(2)]).is_err());
        assert!(parse_response(r#"{"results":[{"scores":[-1.0]}]}"#, &[item(2)]).is_err());
        assert!(parse_response(r#"{"oops":1}"#, &[item(2)]).is_err());
        assert!(parse_response("<html>", &[item(2)]).is_err());
    }
}
