//! Text generation backends used for date parsing, answer generation and judging.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, JsonClient};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("mock backend has no response for the prompt")]
    NoMockResponse,
}

impl From<HttpError> for BackendError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { .. } => BackendError::Timeout(e.to_string()),
            other => BackendError::Unavailable(other.to_string()),
        }
    }
}

/// Completes a rendered prompt into raw text.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Backend speaking `POST {"prompt","max_tokens"} -> {"text"}`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    max_tokens: u32,
    client: JsonClient,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_retries: u32) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_tokens: 512,
            client: JsonClient::new(timeout, max_retries),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_credential_env(mut self, var: Option<&str>) -> Self {
        self.client = self.client.with_credential_env(var);
        self
    }
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let resp: GenerateResponse = self.client.post(
            &self.endpoint,
            &GenerateRequest {
                prompt,
                max_tokens: self.max_tokens,
            },
        )?;
        Ok(resp.text)
    }
}

/// One rule of a [`MockBackend`]: when the prompt contains `contains`, reply with `response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub response: String,
}

/// Deterministic replay backend: the first rule whose needle occurs in the prompt wins.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    fallback: Option<String>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self {
            rules,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = Some(response.into());
        self
    }

    pub fn rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    /// Loads rules from a JSONL file of `{"contains","response"}` objects.
    pub fn from_jsonl(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rules = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<MockRule>, _>>()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.contains))
            .map(|r| r.response.clone())
            .or_else(|| self.fallback.clone())
            .ok_or(BackendError::NoMockResponse)
    }
}

/// Backend driven by a closure; handy for scripted failure sequences.
pub struct FnBackend<F>(pub F);

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn name(&self) -> &str {
        "fn"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (self.0)(prompt)
    }
}

/// Strips optional Markdown code fences and surrounding whitespace from a model reply.
pub(crate) fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(inner) = t.strip_prefix("```") else {
        return t;
    };
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    // drop an info string such as `json`
    match inner.find('\n') {
        Some(nl) if !inner[..nl].trim().contains(['{', '[']) => inner[nl + 1..].trim(),
        _ => inner.trim(),
    }
}
