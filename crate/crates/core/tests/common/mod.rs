#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use zps_core::catalog::{LabelId, Prompt, TaskSpec, UnlabeledExample, Verbalizer};
use zps_core::scoring::{Capabilities, ScoreRequest, ScorerBackend};
use zps_core::Result;

/// Deterministic log-likelihood of a candidate given an input.
pub fn toy_score(input: &str, candidate: &str) -> f64 {
    let mut h: u64 = 1469598103934665603;
    for b in input.bytes().chain([0xff]).chain(candidate.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    -((h % 4000) as f64) / 400.0 - 0.01
}

/// In-process backend built on [`toy_score`] that counts scored cells.
pub struct ToyBackend {
    pub max_batch: usize,
    pub calls: AtomicUsize,
}

impl ToyBackend {
    pub fn new(max_batch: usize) -> Self {
        Self {
            max_batch,
            calls: AtomicUsize::new(0),
        }
    }
}

impl ScorerBackend for ToyBackend {
    fn model_name(&self) -> &str {
        "toy"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_batch: self.max_batch,
            per_token: false,
        }
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(batch.len(), Ordering::SeqCst);
        Ok(batch
            .iter()
            .map(|r| r.candidates.iter().map(|c| toy_score(&r.input, c)).collect())
            .collect())
    }
}

/// A task with one `text` field, `c` choices and `p` prompts.
pub fn toy_task(p: usize, c: usize, n: usize) -> (TaskSpec, Vec<Prompt>, Vec<UnlabeledExample>) {
    let choices: Vec<LabelId> = (0..c).map(|j| LabelId(format!("l{j}"))).collect();
    let task = TaskSpec {
        task_id: "toy".into(),
        field_schema: vec!["text".into()],
        choices: choices.clone(),
        gold_label_field: None,
    };
    let prompts = (0..p)
        .map(|i| {
            let v = Verbalizer::new(
                choices
                    .iter()
                    .map(|l| (l.0.clone(), format!("answer {} {}", l.0, i % 3))),
            );
            Prompt::new(&format!("p{i}"), &format!("Q{i}: {{{{text}}}} ->"), v).unwrap()
        })
        .collect();
    let examples = (0..n)
        .map(|k| UnlabeledExample {
            example_id: format!("e{k}"),
            fields: [("text".to_string(), format!("sample number {k}"))].into(),
            gold_label: None,
        })
        .collect();
    (task, prompts, examples)
}

pub struct Stub {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<Value>>>,
    /// `Authorization` header of each request, if sent.
    pub auth: Arc<Mutex<Vec<Option<String>>>>,
}

/// Serves `handler(request_index, body) -> (status, response body)` on a
/// local port. The server thread lives until the process exits.
pub fn stub_server<F>(handler: F) -> Stub
where
    F: Fn(usize, &Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (count, seen, seen_auth) = (requests.clone(), bodies.clone(), auth.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap_or(0);
                    } else if name.eq_ignore_ascii_case("authorization") {
                        authorization = Some(value.trim().to_string());
                    }
                }
            }
            let mut body = vec![0u8; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let idx = count.fetch_add(1, Ordering::SeqCst);
            seen.lock().unwrap().push(value.clone());
            seen_auth.lock().unwrap().push(authorization);
            let (status, text) = handler(idx, &value);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
            let _ = stream.flush();
        }
    });
    Stub {
        url,
        requests,
        bodies,
        auth,
    }
}

/// A well-behaved reply: toy scores for every item of the request.
pub fn toy_reply(body: &Value) -> String {
    let results: Vec<Value> = body["items"]
        .as_array()
        .map(|items| {
            items
                .iter()
                .map(|item| {
                    let input = item["input"].as_str().unwrap_or_default();
                    let scores: Vec<f64> = item["candidates"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|c| toy_score(input, c.as_str().unwrap()))
                        .collect();
                    json!({ "scores": scores })
                })
                .collect()
        })
        .unwrap_or_default();
    json!({ "results": results }).to_string()
}
