//! Offline enrichment of memory entries into [`AuxiliaryClue`]s.
//!
//! Three independent providers produce the OCR text, the QA-guided image
//! description and the invocation completion. Providers are either an external
//! HTTP service or a hermetic mock that reads sidecar files next to the image.

mod providers;

pub use providers::{ClueProvider, HttpProvider, MockSidecarProvider, ProviderError};

use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::strip_code_fence;
use crate::memory::{AuxiliaryClue, MemoryEntry};
use crate::prompts::{self, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    ExternalHttp,
    MockSidecar,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub credential_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Root directory that relative `image_ref`s resolve against (mock only).
    #[serde(default)]
    pub sidecar_root: Option<String>,
    /// Mock only: echo the invocation command when no completion sidecar exists.
    #[serde(default)]
    pub echo_missing_completion: bool,
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self {
            provider_kind: ProviderKind::MockSidecar,
            endpoint: None,
            credential_env_var: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            sidecar_root: None,
            echo_missing_completion: false,
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            provider_kind: ProviderKind::ExternalHttp,
            endpoint: Some(endpoint.into()),
            ..Self::mock()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if self.provider_kind == ProviderKind::ExternalHttp
            && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty())
        {
            return Err("external-http provider requires an endpoint".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn build(&self) -> Result<Arc<dyn ClueProvider>, AugmentError> {
        self.validate().map_err(AugmentError::Config)?;
        Ok(match self.provider_kind {
            ProviderKind::MockSidecar => Arc::new(
                MockSidecarProvider::new(self.sidecar_root.clone().unwrap_or_default())
                    .echo_missing_completion(self.echo_missing_completion),
            ),
            ProviderKind::ExternalHttp => Arc::new(HttpProvider::new(
                self.endpoint.clone().unwrap_or_default(),
                self.timeout(),
                self.max_retries,
                self.credential_env_var.as_deref(),
            )),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderTask {
    Ocr,
    Caption,
    Completion,
}

impl ProviderTask {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderTask::Ocr => "ocr",
            ProviderTask::Caption => "caption",
            ProviderTask::Completion => "completion",
        }
    }
}

/// A request to a vision model for one of the two templated augmentations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRequest {
    pub image_ref: Option<String>,
    pub invocation_command: String,
    pub prompt_template_id: TemplateId,
}

impl CaptionRequest {
    pub fn new(entry: &MemoryEntry, template: TemplateId) -> Result<Self, AugmentError> {
        match template {
            TemplateId::QaGuidedDescription | TemplateId::InvocationCompletion => Ok(Self {
                image_ref: entry.image_ref.clone(),
                invocation_command: entry.invocation_command.clone(),
                prompt_template_id: template,
            }),
            other => Err(AugmentError::Config(format!(
                "template `{}` is not an augmentation template",
                other.name()
            ))),
        }
    }

    pub fn render(&self) -> String {
        let rendered = match self.prompt_template_id {
            TemplateId::InvocationCompletion => prompts::render(
                TemplateId::InvocationCompletion,
                &[("{{invocation}}", &self.invocation_command)],
            ),
            id => prompts::render(id, &[]),
        };
        rendered.expect("augmentation templates take only known placeholders")
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider timed out: {0}")]
    Timeout(String),
    #[error("malformed provider output: {0}")]
    MalformedProviderOutput(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("all augmentation providers failed (ocr: {ocr}; caption: {caption}; completion: {completion})")]
    AugmentationFailed {
        ocr: String,
        caption: String,
        completion: String,
    },
}

impl From<ProviderError> for AugmentError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Unavailable(m) => AugmentError::ProviderUnavailable(m),
            ProviderError::Timeout(m) => AugmentError::Timeout(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AugmentWarning {
    pub task: ProviderTask,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub clue: AuxiliaryClue,
    pub warnings: Vec<AugmentWarning>,
}

/// Runs the three clue providers for memory entries.
#[derive(Clone)]
pub struct Augmenter {
    ocr: Arc<dyn ClueProvider>,
    caption: Arc<dyn ClueProvider>,
    completion: Arc<dyn ClueProvider>,
}

impl Augmenter {
    pub fn new(
        ocr: Arc<dyn ClueProvider>,
        caption: Arc<dyn ClueProvider>,
        completion: Arc<dyn ClueProvider>,
    ) -> Self {
        Self {
            ocr,
            caption,
            completion,
        }
    }

    /// One provider serving all three tasks.
    pub fn uniform(provider: Arc<dyn ClueProvider>) -> Self {
        Self::new(provider.clone(), provider.clone(), provider)
    }

    pub fn run_ocr(&self, entry: &MemoryEntry) -> Result<String, AugmentError> {
        Ok(self
            .ocr
            .call(ProviderTask::Ocr, entry, "")?
            .trim()
            .to_string())
    }

    pub fn generate_qa_guided_caption(&self, entry: &MemoryEntry) -> Result<String, AugmentError> {
        let prompt = CaptionRequest::new(entry, TemplateId::QaGuidedDescription)?.render();
        let raw = self.caption.call(ProviderTask::Caption, entry, &prompt)?;
        parse_caption(&raw)
    }

    pub fn complete_invocation(&self, entry: &MemoryEntry) -> Result<String, AugmentError> {
        let prompt = CaptionRequest::new(entry, TemplateId::InvocationCompletion)?.render();
        let raw = self
            .completion
            .call(ProviderTask::Completion, entry, &prompt)?;
        let text = raw.trim();
        // providers sometimes wrap the sentence in quotes or a JSON string
        let text = serde_json::from_str::<String>(text).unwrap_or_else(|_| text.to_string());
        if text.contains('\n') {
            return Err(AugmentError::MalformedProviderOutput(
                "invocation completion must be a single sentence".into(),
            ));
        }
        Ok(text)
    }

    /// Produces the full clue. A failing provider leaves its field empty and
    /// records a warning; only the failure of all three is an error.
    pub fn augment(&self, entry: &MemoryEntry) -> Result<AugmentOutcome, AugmentError> {
        let ocr = self.run_ocr(entry);
        let caption = self.generate_qa_guided_caption(entry);
        let completion = self.complete_invocation(entry);

        if let (Err(o), Err(c), Err(p)) = (&ocr, &caption, &completion) {
            return Err(AugmentError::AugmentationFailed {
                ocr: o.to_string(),
                caption: c.to_string(),
                completion: p.to_string(),
            });
        }

        let mut warnings = Vec::new();
        let mut take = |task: ProviderTask, r: Result<String, AugmentError>| match r {
            Ok(v) => v,
            Err(e) => {
                tracing::warn!(id = %entry.id, task = task.as_str(), error = %e, "augmentation field left empty");
                warnings.push(AugmentWarning {
                    task,
                    message: e.to_string(),
                });
                String::new()
            }
        };
        let clue = AuxiliaryClue {
            ocr_text: take(ProviderTask::Ocr, ocr),
            image_caption: take(ProviderTask::Caption, caption),
            invocation_completion: take(ProviderTask::Completion, completion),
        };
        Ok(AugmentOutcome { clue, warnings })
    }

    /// Augments a batch with at most `workers` concurrent entries. Output order follows input order.
    pub fn augment_batch(
        &self,
        entries: &[MemoryEntry],
        workers: usize,
    ) -> Vec<Result<AugmentOutcome, AugmentError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| entries.par_iter().map(|e| self.augment(e)).collect())
    }
}

fn parse_caption(raw: &str) -> Result<String, AugmentError> {
    let body = strip_code_fence(raw);
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| AugmentError::MalformedProviderOutput(format!("caption is not JSON: {e}")))?;
    let description = value
        .get("image_description")
        .and_then(|v| v.as_str())
        .ok_or_else(|| {
            AugmentError::MalformedProviderOutput(
                "caption JSON has no `image_description` string".into(),
            )
        })?;
    tracing::debug!(
        recall_question = %value.get("recall_question").unwrap_or(&serde_json::Value::Null),
        recall_answer = %value.get("recall_answer").unwrap_or(&serde_json::Value::Null),
        "discarding predicted recall questions"
    );
    Ok(description.to_string())
}
