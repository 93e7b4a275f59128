#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use lapt::bench::{synth_generate, BenchmarkTable, SynthParams, TaskSpec};
use lapt::reasoner::{ChatRequest, ChatTransport, TransportError};
use lapt::space::builtin;

pub const SOURCE: &str = "jigsaw";
pub const TARGETS: [&str; 6] = [
    "class_object",
    "class_scene",
    "room_layout",
    "autoencoder",
    "normal",
    "segmentsemantic",
];
/// Cross-task correlation of the desk-scale suite.
pub const SUITE_RHO: f64 = 0.8;

/// Trans101-shaped synthetic suite: λ = 0, σ = 0, seed 7.
pub fn trans101_suite() -> BenchmarkTable {
    let mut tasks = vec![TaskSpec::maximize(SOURCE)];
    tasks.extend(TARGETS.iter().map(|&t| {
        if t == "room_layout" {
            TaskSpec::minimize(t)
        } else {
            TaskSpec::maximize(t)
        }
    }));
    let params = SynthParams::new(7, 0.0, 0.0).with_task_correlation(SUITE_RHO);
    synth_generate(&builtin::trans101(), &params, &tasks).unwrap()
}

pub fn targets() -> Vec<String> {
    TARGETS.iter().map(|s| s.to_string()).collect()
}

/// Replays canned replies and records every request.
#[derive(Clone, Default)]
pub struct ScriptedTransport {
    replies: Arc<Mutex<VecDeque<String>>>,
    pub requests: Arc<Mutex<Vec<ChatRequest>>>,
    /// Answer once the script runs out.
    fallback: Option<String>,
}

impl ScriptedTransport {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedTransport {
            replies: Arc::new(Mutex::new(replies.into_iter().map(Into::into).collect())),
            ..Default::default()
        }
    }

    pub fn repeating(reply: impl Into<String>) -> Self {
        ScriptedTransport {
            fallback: Some(reply.into()),
            ..Default::default()
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        self.requests.lock().unwrap().push(request.clone());
        let next = self.replies.lock().unwrap().pop_front();
        next.or_else(|| self.fallback.clone())
            .ok_or_else(|| TransportError::Network("script exhausted".into()))
    }
}

/// A reply holding `body` in a fenced json block.
pub fn fenced(body: &serde_json::Value) -> String {
    format!(
        "Here is the principle.\n\n```json\n{}\n```\n",
        serde_json::to_string_pretty(body).unwrap()
    )
}

/// Trans101 body keeping `ops` at every layer.
pub fn trans101_body(ops: &[&str]) -> serde_json::Value {
    let layer = serde_json::json!({"allowed_ops": ops, "allowed_sources": "ALL"});
    serde_json::json!({
        "per_layer": vec![layer; 6],
        "rationale": ["scripted"],
    })
}

/// Every file under `dir`, recursively.
pub fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Whether any file under `dir` contains `needle`.
pub fn grep_dir(dir: &Path, needle: &str) -> Vec<std::path::PathBuf> {
    files_under(dir)
        .into_iter()
        .filter(|p| String::from_utf8_lossy(&std::fs::read(p).unwrap()).contains(needle))
        .collect()
}

/// Minimal HTTP/1.1 endpoint answering each request with `reply` and
/// reporting the request's authorization header and body.
pub fn serve(reply: String, requests: usize) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut auth, mut len) = (String::new(), 0usize);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "authorization" => auth = value.trim().to_string(),
                    "content-length" => len = value.trim().parse().unwrap(),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send((auth, String::from_utf8(body).unwrap())).unwrap();
            let payload =
                serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": reply}}]})
                    .to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}
