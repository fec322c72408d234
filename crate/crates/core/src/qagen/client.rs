//! Generation backends and the retrying driver around them.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::PromptTemplate;
use crate::canon;
use crate::corpus::ImageCaptionRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_tokens: 1024,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
        }
    }
}

impl GenerationParams {
    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    /// Retrying will not help.
    Permanent(String),
    /// The call succeeded but the envelope could not be read.
    MalformedEnvelope(String),
}

impl std::fmt::Display for ClientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientError::Transient(m) => write!(f, "transient: {m}"),
            ClientError::Permanent(m) => write!(f, "permanent: {m}"),
            ClientError::MalformedEnvelope(m) => write!(f, "malformed envelope: {m}"),
        }
    }
}

pub trait GenerationClient: Send + Sync {
    /// Identifier recorded with every generation.
    fn backend_id(&self) -> String;

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub record_id: String,
    pub backend_id: String,
    pub response_text: String,
    pub request_fingerprint: String,
    pub retries: u32,
    /// Set when no response could be obtained; `response_text` is then empty.
    pub failure: Option<String>,
}

pub fn request_fingerprint(backend_id: &str, prompt: &str, params: &GenerationParams) -> String {
    let material = json!({
        "backend_id": backend_id,
        "model": params.model,
        "prompt": prompt,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    let canonical = canon::to_canonical_json(&material).expect("json value serializes");
    canon::sha256_hex(canonical.as_bytes())
}

/// Call `client` for one record, retrying transient failures with
/// exponential backoff. Never fails: exhausted retries and permanent errors
/// come back as a failure-marked generation with an empty response.
pub fn generate(
    client: &dyn GenerationClient,
    template: &PromptTemplate,
    record: &ImageCaptionRecord,
    params: &GenerationParams,
) -> RawGeneration {
    let backend_id = client.backend_id();
    let prompt = match template.render(&record.caption) {
        Ok(p) => p,
        Err(e) => {
            return RawGeneration {
                record_id: record.record_id.clone(),
                backend_id,
                response_text: String::new(),
                request_fingerprint: String::new(),
                retries: 0,
                failure: Some(e.to_string()),
            }
        }
    };
    let request_fingerprint = request_fingerprint(&backend_id, &prompt, params);
    let mut retries = 0;
    let outcome = loop {
        match client.complete(&prompt, params) {
            Ok(text) => break Ok(text),
            Err(ClientError::Transient(msg)) if retries < params.max_retries => {
                tracing::debug!(record = %record.record_id, retries, "transient failure: {msg}");
                std::thread::sleep(params.backoff(retries));
                retries += 1;
            }
            Err(e) => break Err(e),
        }
    };
    let (response_text, failure) = match outcome {
        Ok(text) => (text, None),
        Err(e) => {
            tracing::warn!(record = %record.record_id, retries, "generation failed: {e}");
            (String::new(), Some(e.to_string()))
        }
    };
    RawGeneration {
        record_id: record.record_id.clone(),
        backend_id,
        response_text,
        request_fingerprint,
        retries,
        failure,
    }
}

/// Generate for every record with at most `concurrency` requests in flight.
/// Output order matches `records`.
pub fn generate_all(
    client: &dyn GenerationClient,
    template: &PromptTemplate,
    records: &[ImageCaptionRecord],
    params: &GenerationParams,
    concurrency: usize,
) -> Result<Vec<RawGeneration>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        records
            .par_iter()
            .map(|r| generate(client, template, r, params))
            .collect()
    }))
}

/// OpenAI-compatible chat completion endpoint.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    /// `base_url` is joined with `/chat/completions`. The API key, when
    /// `api_key_env` is given, is read from that environment variable.
    pub fn new(base_url: &str, api_key_env: Option<&str>, timeout: Duration) -> Result<Self> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Ok(HttpChatClient {
            agent,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl GenerationClient for HttpChatClient {
    fn backend_id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ClientError> {
        let body = json!({
            "model": params.model,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(classify_ureq_error)?;
        let envelope: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::MalformedEnvelope(e.to_string()))?;
        envelope
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                ClientError::MalformedEnvelope("missing choices[0].message.content".into())
            })
    }
}

pub(crate) fn classify_ureq_error(err: ureq::Error) -> ClientError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ClientError::Transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ClientError::Permanent(format!("HTTP {code}")),
        ureq::Error::Io(e) => ClientError::Transient(e.to_string()),
        ureq::Error::Timeout(t) => ClientError::Transient(format!("timeout: {t}")),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ClientError::Transient(err.to_string())
        }
        other => ClientError::Permanent(other.to_string()),
    }
}
