//! Model clients: local stubs for deterministic runs and an HTTP client for
//! chat-style vision endpoints.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// Everything a client may look at when transcribing one page.
#[derive(Debug, Clone, Copy)]
pub struct TranscribeRequest<'a> {
    pub page_id: &'a str,
    pub instruction: &'a str,
    pub image_png: &'a [u8],
    /// Only the echo stub reads this.
    pub ground_truth: &'a str,
}

pub trait ModelClient: Send + Sync {
    /// Model name plus a hash of its configuration.
    fn identity(&self) -> String;

    fn transcribe(&self, request: &TranscribeRequest<'_>) -> Result<String>;
}

/// `name@` followed by 8 hex digits of SHA-256 over `config`.
pub fn identity_with_hash(name: &str, config: &str) -> String {
    let digest = Sha256::digest(config.as_bytes());
    format!("{name}@{}", hex::encode(&digest[..4]))
}

/// Returns the ground truth unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoStub;

impl ModelClient for EchoStub {
    fn identity(&self) -> String {
        identity_with_hash("echo-stub", "")
    }

    fn transcribe(&self, request: &TranscribeRequest<'_>) -> Result<String> {
        Ok(request.ground_truth.to_string())
    }
}

/// Always answers with an empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyStub;

impl ModelClient for EmptyStub {
    fn identity(&self) -> String {
        identity_with_hash("empty-stub", "")
    }

    fn transcribe(&self, _request: &TranscribeRequest<'_>) -> Result<String> {
        Ok(String::new())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub prediction: String,
}

/// Replays predictions keyed by page id.
#[derive(Debug, Clone)]
pub struct FileStub {
    name: String,
    predictions: HashMap<String, String>,
    hash: String,
}

impl FileStub {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).at(path)?;
        let mut lines = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.at(path)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                index: i,
                reason: e.to_string(),
            })?;
            lines.push(parsed);
        }
        let name = path
            .file_stem()
            .map_or_else(|| "file-stub".to_string(), |s| s.to_string_lossy().into_owned());
        Ok(Self::from_predictions(&name, lines))
    }

    pub fn from_predictions(name: &str, lines: Vec<PredictionLine>) -> Self {
        let mut hasher = Sha256::new();
        for l in &lines {
            hasher.update(l.id.as_bytes());
            hasher.update([0]);
            hasher.update(l.prediction.as_bytes());
            hasher.update([0]);
        }
        Self {
            name: name.to_string(),
            hash: hex::encode(&hasher.finalize()[..4]),
            predictions: lines.into_iter().map(|l| (l.id, l.prediction)).collect(),
        }
    }
}

impl ModelClient for FileStub {
    fn identity(&self) -> String {
        format!("{}@{}", self.name, self.hash)
    }

    fn transcribe(&self, request: &TranscribeRequest<'_>) -> Result<String> {
        self.predictions
            .get(request.page_id)
            .cloned()
            .ok_or_else(|| Error::Client(format!("no prediction for page {}", request.page_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "ocr-model".into(),
            auth_env: None,
            timeout_secs: 120.0,
            retries: 3,
            backoff_ms: 500,
            max_tokens: None,
            temperature: None,
        }
    }
}

/// Posts the instruction and a base64 PNG to a chat-completions endpoint and
/// returns the first choice's message text.
pub struct WireClient {
    config: WireConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl WireClient {
    pub fn new(config: WireConfig) -> Result<Self> {
        if config.timeout_secs <= 0.0 {
            return Err(Error::Config("wire client timeout must be positive".into()));
        }
        let token = match &config.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent, token })
    }

    fn body(&self, request: &TranscribeRequest<'_>) -> serde_json::Value {
        let image = base64::engine::general_purpose::STANDARD.encode(request.image_png);
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": request.instruction},
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}}
                ]
            }]
        });
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = m.into();
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = t.into();
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err((true, format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err((false, format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| (false, format!("bad JSON: {e}")))?;
        extract_reply(&value).ok_or_else(|| (false, "response has no choices[0].message.content".into()))
    }
}

/// Text of `choices[0].message.content`, either a string or a list of text parts.
pub fn extract_reply(value: &serde_json::Value) -> Option<String> {
    let content = value.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl ModelClient for WireClient {
    fn identity(&self) -> String {
        let config = serde_json::to_string(&WireConfig {
            auth_env: None,
            ..self.config.clone()
        })
        .expect("config serializes");
        identity_with_hash(&self.config.model, &config)
    }

    fn transcribe(&self, request: &TranscribeRequest<'_>) -> Result<String> {
        let body = self.body(request);
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((false, reason)) => return Err(Error::Client(reason)),
                Err((true, reason)) => {
                    warn!("{}: attempt {} of {attempts} failed: {reason}", request.page_id, attempt + 1);
                    last = reason;
                    if attempt + 1 < attempts {
                        thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt.min(6)));
                    }
                }
            }
        }
        Err(Error::Unreachable {
            attempts,
            reason: last,
        })
    }
}
