use std::sync::Arc;

use thiserror::Error;

use super::{recall_time_string, TemporalParse};
use crate::backend::{strip_code_fence, BackendError, LlmBackend};
use crate::memory::RecallQuery;
use crate::prompts::{render, RenderError, TemplateId};

#[derive(Debug, Error)]
pub enum LlmParseError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("malformed date parser output `{raw}`: {message}")]
    Malformed { raw: String, message: String },
}

/// Date parser that asks an LLM with the datetime template.
#[derive(Clone)]
pub struct LlmDateParser {
    backend: Arc<dyn LlmBackend>,
}

impl std::fmt::Debug for LlmDateParser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmDateParser")
            .field("backend", &self.backend.name())
            .finish()
    }
}

impl LlmDateParser {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self { backend }
    }

    pub fn prompt(q: &RecallQuery) -> Result<String, RenderError> {
        render(
            TemplateId::DatetimeParse,
            &[
                ("{{question}}", q.text.as_str()),
                ("{{recall_time}}", &recall_time_string(q)),
            ],
        )
    }

    pub fn parse(&self, q: &RecallQuery) -> Result<TemporalParse, LlmParseError> {
        let raw = self.backend.complete(&Self::prompt(q)?)?;
        serde_json::from_str(strip_code_fence(&raw)).map_err(|e| LlmParseError::Malformed {
            raw: raw.clone(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::temporal::{ParseSource, TemporalParser};

    fn monday() -> RecallQuery {
        // 2024-05-06 12:00 UTC
        RecallQuery::new("where did I park yesterday", 1_714_996_800)
    }

    #[test]
    fn prompt_carries_question_and_local_day() {
        let p = LlmDateParser::prompt(&monday()).unwrap();
        assert!(
            p.contains("question: where did I park yesterday\nrecall_time: 2024-05-06 Monday\n")
        );
        assert!(!p.contains("{{"));
    }

    #[test]
    fn llm_output_is_used_when_valid() {
        let mock = MockBackend::new(vec![]).with_fallback(
            "```json\n{\"search_start_date\": \"2024-05-05\", \"search_end_date\": \"2024-05-05\", \"search_recent\": false}\n```",
        );
        let out = TemporalParser::llm(Arc::new(mock)).parse(&monday());
        assert_eq!(out.source, ParseSource::Llm);
        assert_eq!(out.parse.range.unwrap().start().to_string(), "2024-05-05");
        assert!(out.warning.is_none());
    }

    #[test]
    fn malformed_output_falls_back_to_rules() {
        for raw in [
            "the user parked yesterday",
            r#"{"search_start_date": "2024-05-05", "search_end_date": "", "search_recent": false}"#,
            r#"{"search_start_date": "2024-05-07", "search_end_date": "2024-05-05", "search_recent": false}"#,
        ] {
            let out = TemporalParser::llm(Arc::new(MockBackend::new(vec![]).with_fallback(raw)))
                .parse(&monday());
            assert_eq!(out.source, ParseSource::RulesFallback, "{raw}");
            assert!(out.warning.is_some());
            assert_eq!(out.parse.range.unwrap().start().to_string(), "2024-05-05");
        }
        let out = TemporalParser::llm(Arc::new(MockBackend::new(vec![]))).parse(&monday());
        assert_eq!(out.source, ParseSource::RulesFallback);
    }
}
