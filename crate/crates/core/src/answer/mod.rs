//! Answer generation over the top-ranked memories, and SFT data construction.

mod sft;

pub use sft::{build_sft_dataset, write_sft_jsonl, SftExample, SftOptions, SftSummary};

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{strip_code_fence, BackendError, LlmBackend};
use crate::memory::{AugmentedMemory, RecallQuery};
use crate::prompts::{render, RenderError, TemplateId};
use crate::temporal::local_datetime;

pub const DEFAULT_MAX_CANDIDATES: usize = 20;

/// Appended to the prompt for the single retry after malformed output.
pub const REPROMPT_SUFFIX: &str =
    "\nReturn only a JSON object of the form {\"id_list\": [\"<memory_id>\"], \"response\": \"<answer>\"}.\n";

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("answer generation needs at least one candidate memory")]
    NoCandidates,
    #[error("{given} candidates exceed the limit of {max}")]
    TooManyCandidates { given: usize, max: usize },
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// One memory as shown to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPassage {
    pub memory_id: String,
    pub created_datetime: String,
    pub description: String,
    pub visual_content: String,
    pub ocr_text: String,
    pub address: String,
}

/// `YYYY-MM-DD HH:MM Weekday` in the given timezone.
pub fn format_datetime(ts: i64, offset_minutes: i32) -> String {
    local_datetime(ts, offset_minutes)
        .format("%Y-%m-%d %H:%M %A")
        .to_string()
}

impl MemoryPassage {
    pub fn from_memory(m: &AugmentedMemory, tz_offset_minutes: i32) -> Self {
        let visual = [
            m.clue.invocation_completion.trim(),
            m.clue.image_caption.trim(),
        ]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
        Self {
            memory_id: m.entry.id.clone(),
            created_datetime: format_datetime(m.entry.created_at, tz_offset_minutes),
            description: m.entry.invocation_command.clone(),
            visual_content: visual,
            ocr_text: m.clue.ocr_text.clone(),
            address: m.entry.location.clone(),
        }
    }
}

/// Renders the answer prompt with candidates in the given order.
pub fn build_prompt(
    q: &RecallQuery,
    candidates: &[AugmentedMemory],
    max: usize,
) -> Result<String, AnswerError> {
    if candidates.is_empty() {
        return Err(AnswerError::NoCandidates);
    }
    if candidates.len() > max {
        return Err(AnswerError::TooManyCandidates {
            given: candidates.len(),
            max,
        });
    }
    let passages: Vec<MemoryPassage> = candidates
        .iter()
        .map(|m| MemoryPassage::from_memory(m, q.timezone_offset_minutes))
        .collect();
    let json = serde_json::to_string(&passages).expect("passages serialize");
    Ok(render(
        TemplateId::AnswerGenerationMultiTask,
        &[
            (
                "{current_date_time}",
                &format_datetime(q.asked_at, q.timezone_offset_minutes),
            ),
            ("{memory_candidates}", &json),
            ("{user_query}", &q.text),
        ],
    )?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub id_list: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// True when the backend never produced parseable JSON.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Deserialize)]
struct RawAnswer {
    #[serde(default)]
    id_list: Vec<serde_json::Value>,
    response: String,
}

/// Parses `{id_list, response}`, tolerating code fences and prose around the object.
fn parse_answer(raw: &str) -> Option<(Vec<String>, String)> {
    let stripped = strip_code_fence(raw);
    let attempt = |s: &str| serde_json::from_str::<RawAnswer>(s).ok();
    let parsed = attempt(stripped).or_else(|| {
        let (start, end) = (stripped.find('{')?, stripped.rfind('}')?);
        (start < end)
            .then(|| attempt(&stripped[start..=end]))
            .flatten()
    })?;
    if parsed.response.trim().is_empty() {
        return None;
    }
    let ids = parsed
        .id_list
        .into_iter()
        .filter_map(|v| match v {
            serde_json::Value::String(s) => Some(s),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        })
        .filter(|s| !s.is_empty())
        .collect();
    Some((ids, parsed.response))
}

/// Calls the backend, reprompting once on malformed output.
pub fn generate_answer(
    q: &RecallQuery,
    candidates: &[AugmentedMemory],
    backend: &dyn LlmBackend,
    max_candidates: usize,
) -> Result<AnswerResult, AnswerError> {
    let prompt = build_prompt(q, candidates, max_candidates)?;
    let first = backend.complete(&prompt)?;
    let (parsed, raw) = match parse_answer(&first) {
        Some(p) => (Some(p), first),
        None => {
            let second = backend.complete(&format!("{prompt}{REPROMPT_SUFFIX}"))?;
            (parse_answer(&second), second)
        }
    };
    let Some((ids, response)) = parsed else {
        tracing::warn!("generator output is not valid JSON after a reprompt; returning raw text");
        return Ok(AnswerResult {
            id_list: Vec::new(),
            response: raw.trim().to_string(),
            warnings: vec!["generator output was not valid JSON; returned raw text".into()],
            fallback: true,
        });
    };

    let known: HashSet<&str> = candidates.iter().map(|m| m.id()).collect();
    let mut warnings = Vec::new();
    let mut id_list: Vec<String> = Vec::new();
    for id in ids {
        if !known.contains(id.as_str()) {
            warnings.push(format!(
                "dropped id `{id}` that is not among the candidates"
            ));
        } else if !id_list.contains(&id) {
            id_list.push(id);
        }
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(AnswerResult {
        id_list,
        response,
        warnings,
        fallback: false,
    })
}

/// Generator with a shared backend and a cap on concurrent requests.
#[derive(Clone)]
pub struct AnswerGenerator {
    backend: Arc<dyn LlmBackend>,
    max_candidates: usize,
    workers: usize,
}

impl AnswerGenerator {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            workers: 4,
        }
    }

    pub fn with_max_candidates(mut self, max: usize) -> Self {
        self.max_candidates = max;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn backend(&self) -> &Arc<dyn LlmBackend> {
        &self.backend
    }

    pub fn generate(
        &self,
        q: &RecallQuery,
        candidates: &[AugmentedMemory],
    ) -> Result<AnswerResult, AnswerError> {
        generate_answer(q, candidates, self.backend.as_ref(), self.max_candidates)
    }

    /// Answers several questions with at most `workers` requests in flight. Output order matches input.
    pub fn generate_batch(
        &self,
        jobs: &[(RecallQuery, Vec<AugmentedMemory>)],
    ) -> Vec<Result<AnswerResult, AnswerError>> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("thread pool");
        pool.install(|| jobs.par_iter().map(|(q, c)| self.generate(q, c)).collect())
    }
}
