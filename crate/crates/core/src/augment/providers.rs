use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProviderTask;
use crate::http::{HttpError, JsonClient};
use crate::memory::MemoryEntry;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Timeout(String),
}

impl From<HttpError> for ProviderError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { .. } => ProviderError::Timeout(e.to_string()),
            other => ProviderError::Unavailable(other.to_string()),
        }
    }
}

/// Source of raw augmentation output. Implementations must be callable from
/// several workers at once.
pub trait ClueProvider: Send + Sync {
    fn call(
        &self,
        task: ProviderTask,
        entry: &MemoryEntry,
        prompt: &str,
    ) -> Result<String, ProviderError>;
}

/// Reads `<image_ref>.ocr.txt`, `<image_ref>.caption.json` and `<image_ref>.completion.txt`.
///
/// A missing OCR sidecar means the image has no text. Missing caption or
/// completion sidecars are provider failures, unless completion echoing is on.
#[derive(Debug, Clone)]
pub struct MockSidecarProvider {
    root: PathBuf,
    echo_completion: bool,
}

impl MockSidecarProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            echo_completion: false,
        }
    }

    pub fn echo_missing_completion(mut self, on: bool) -> Self {
        self.echo_completion = on;
        self
    }

    pub fn sidecar_path(&self, image_ref: &str, task: ProviderTask) -> PathBuf {
        let image = image_ref.strip_prefix("file://").unwrap_or(image_ref);
        let suffix = match task {
            ProviderTask::Ocr => "ocr.txt",
            ProviderTask::Caption => "caption.json",
            ProviderTask::Completion => "completion.txt",
        };
        self.root.join(format!("{image}.{suffix}"))
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, ProviderError> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ProviderError::Unavailable(format!(
            "{}: {e}",
            path.display()
        ))),
    }
}

impl ClueProvider for MockSidecarProvider {
    fn call(
        &self,
        task: ProviderTask,
        entry: &MemoryEntry,
        _prompt: &str,
    ) -> Result<String, ProviderError> {
        let Some(image_ref) = entry.image_ref.as_deref() else {
            return match task {
                ProviderTask::Ocr => Ok(String::new()),
                ProviderTask::Completion if self.echo_completion => {
                    Ok(entry.invocation_command.clone())
                }
                _ => Err(ProviderError::Unavailable(format!(
                    "memory `{}` has no image",
                    entry.id
                ))),
            };
        };
        let path = self.sidecar_path(image_ref, task);
        match (task, read_optional(&path)?) {
            (_, Some(text)) => Ok(text.trim_end_matches(['\n', '\r']).to_string()),
            (ProviderTask::Ocr, None) => Ok(String::new()),
            (ProviderTask::Completion, None) if self.echo_completion => {
                Ok(entry.invocation_command.clone())
            }
            (_, None) => Err(ProviderError::Unavailable(format!(
                "no sidecar at {}",
                path.display()
            ))),
        }
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    task: &'a str,
    image_ref: Option<&'a str>,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ProviderResponse {
    output: serde_json::Value,
}

/// Provider speaking `POST {"task","image_ref","prompt"} -> {"output"}`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    client: JsonClient,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
        credential_env: Option<&str>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: JsonClient::new(timeout, max_retries).with_credential_env(credential_env),
        }
    }
}

impl ClueProvider for HttpProvider {
    fn call(
        &self,
        task: ProviderTask,
        entry: &MemoryEntry,
        prompt: &str,
    ) -> Result<String, ProviderError> {
        let resp: ProviderResponse = self.client.post(
            &self.endpoint,
            &ProviderRequest {
                task: task.as_str(),
                image_ref: entry.image_ref.as_deref(),
                prompt,
            },
        )?;
        Ok(match resp.output {
            serde_json::Value::String(s) => s,
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        })
    }
}
