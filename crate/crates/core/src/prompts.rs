//! Versioned prompt templates.
//!
//! Templates are stored verbatim under `templates/` and rendered by literal
//! placeholder substitution, so the surrounding text reaches the model byte for byte.

use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    QaGuidedDescription,
    InvocationCompletion,
    DatetimeParse,
    /// Single-output answer prompt.
    AnswerGeneration,
    /// Answer prompt that also asks for the ids of the memories used.
    AnswerGenerationMultiTask,
    AutoJudge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::QaGuidedDescription,
        TemplateId::InvocationCompletion,
        TemplateId::DatetimeParse,
        TemplateId::AnswerGeneration,
        TemplateId::AnswerGenerationMultiTask,
        TemplateId::AutoJudge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::QaGuidedDescription => "qa_guided_description",
            TemplateId::InvocationCompletion => "invocation_completion",
            TemplateId::DatetimeParse => "datetime_parse",
            TemplateId::AnswerGeneration => "answer_generation",
            TemplateId::AnswerGenerationMultiTask => "answer_generation_multitask",
            TemplateId::AutoJudge => "auto_judge",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn source(self) -> &'static str {
        match self {
            TemplateId::QaGuidedDescription => {
                include_str!("../templates/qa_guided_description.txt")
            }
            TemplateId::InvocationCompletion => {
                include_str!("../templates/invocation_completion.txt")
            }
            TemplateId::DatetimeParse => include_str!("../templates/datetime_parse.txt"),
            TemplateId::AnswerGeneration => include_str!("../templates/answer_generation.txt"),
            TemplateId::AnswerGenerationMultiTask => {
                include_str!("../templates/answer_generation_multitask.txt")
            }
            TemplateId::AutoJudge => include_str!("../templates/auto_judge.txt"),
        }
    }

    /// Placeholders exactly as they appear in the template text.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::QaGuidedDescription => &[],
            TemplateId::InvocationCompletion => &["{{invocation}}"],
            TemplateId::DatetimeParse => &["{{question}}", "{{recall_time}}"],
            TemplateId::AnswerGeneration | TemplateId::AnswerGenerationMultiTask => {
                &["{current_date_time}", "{memory_candidates}", "{user_query}"]
            }
            TemplateId::AutoJudge => &["{{question}}", "{{answer}}", "{{prediction}}"],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("template `{template}` has no placeholder `{placeholder}`")]
    UnknownPlaceholder {
        template: &'static str,
        placeholder: String,
    },
    #[error("template `{template}` is missing a value for `{placeholder}`")]
    MissingValue {
        template: &'static str,
        placeholder: &'static str,
    },
}

/// Renders `id`, substituting each `(placeholder, value)` pair.
///
/// Every placeholder of the template must be supplied exactly once. Values
/// are inserted in a single left-to-right pass, so placeholder-like text
/// inside a value is left untouched.
pub fn render(id: TemplateId, values: &[(&str, &str)]) -> Result<String, RenderError> {
    for (name, _) in values {
        if !id.placeholders().contains(name) {
            return Err(RenderError::UnknownPlaceholder {
                template: id.name(),
                placeholder: name.to_string(),
            });
        }
    }
    for name in id.placeholders() {
        if !values.iter().any(|(n, _)| n == name) {
            return Err(RenderError::MissingValue {
                template: id.name(),
                placeholder: name,
            });
        }
    }

    let src = id.source();
    let mut out = String::with_capacity(src.len() + 256);
    let mut rest = src;
    loop {
        let next = values
            .iter()
            .filter_map(|(name, value)| rest.find(name).map(|pos| (pos, *name, *value)))
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, name, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + name.len()..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    Ok(out)
}
