//! Retrieval and answer metrics, the judge adapter and the benchmark runner.

mod runner;

pub use runner::{
    rank_training_set, run_benchmark, BenchmarkOptions, CaseRecord, EvalReport, MetricBlock,
};

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{strip_code_fence, BackendError, LlmBackend};
use crate::memory::RecallQuery;
use crate::prompts::{render, RenderError, TemplateId};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("case has no positive memories")]
    NoPositives,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("gold answer has no keywords")]
    EmptyGold,
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(#[from] BackendError),
    #[error("malformed judge output `{raw}`: {message}")]
    MalformedJudgeOutput { raw: String, message: String },
    #[error("case `{question_id}` references unknown memory `{memory_id}`")]
    MissingMemory {
        question_id: String,
        memory_id: String,
    },
    #[error("invalid case `{question_id}`: {message}")]
    InvalidCase {
        question_id: String,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid answer domains: {0}")]
    Domains(String),
    #[error("retrieval failed for case `{question_id}`: {message}")]
    Retrieval {
        question_id: String,
        message: String,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Shape,
    Number,
    Yesno,
    #[default]
    Other,
}

/// One benchmark question over a fixed candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub question_id: String,
    pub question: String,
    /// UTC epoch seconds.
    pub query_time: i64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tz_offset_minutes: i32,
    pub candidate_ids: Vec<String>,
    pub positive_ids: Vec<String>,
    pub gold_answer: String,
    #[serde(default)]
    pub category: Category,
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

impl BenchmarkCase {
    pub fn recall_query(&self) -> RecallQuery {
        RecallQuery::new(self.question.clone(), self.query_time).with_offset(self.tz_offset_minutes)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |message: &str| EvalError::InvalidCase {
            question_id: self.question_id.clone(),
            message: message.into(),
        };
        if self.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(invalid("empty gold answer"));
        }
        if self.positive_ids.is_empty() {
            return Err(invalid("no positive ids"));
        }
        if let Some(p) = self
            .positive_ids
            .iter()
            .find(|p| !self.candidate_ids.contains(p))
        {
            return Err(invalid(&format!("positive `{p}` is not a candidate")));
        }
        Ok(())
    }
}

/// Reads and validates a benchmark JSONL file.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkCase>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case: BenchmarkCase = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        case.validate()?;
        out.push(case);
    }
    Ok(out)
}

pub fn write_benchmark(cases: &[BenchmarkCase], path: &Path) -> Result<(), EvalError> {
    let mut text = String::new();
    for c in cases {
        text.push_str(&serde_json::to_string(c).expect("case serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn check(positives: &[String], k: usize) -> Result<HashSet<&str>, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let set: HashSet<&str> = positives.iter().map(String::as_str).collect();
    if set.is_empty() {
        return Err(EvalError::NoPositives);
    }
    Ok(set)
}

/// Fraction of positives found in the top `k`.
pub fn recall_at_k(ranked: &[String], positives: &[String], k: usize) -> Result<f64, EvalError> {
    let pos = check(positives, k)?;
    let hits: HashSet<&str> = ranked
        .iter()
        .take(k)
        .map(String::as_str)
        .filter(|id| pos.contains(id))
        .collect();
    Ok(hits.len() as f64 / pos.len() as f64)
}

/// Binary-gain nDCG over the top `k`.
pub fn ndcg_at_k(ranked: &[String], positives: &[String], k: usize) -> Result<f64, EvalError> {
    let pos = check(positives, k)?;
    let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let mut seen = HashSet::new();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| pos.contains(id.as_str()) && seen.insert(id.as_str()))
        .map(|(i, _)| gain(i + 1))
        .sum();
    let ideal: f64 = (1..=pos.len().min(k)).map(gain).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision, recall and F1 of predicted positive ids. Empty sides score 0.
pub fn id_detection_metrics(predicted: &[String], gold: &[String]) -> IdMetrics {
    let p: HashSet<&str> = predicted.iter().map(String::as_str).collect();
    let g: HashSet<&str> = gold.iter().map(String::as_str).collect();
    let tp = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() {
        0.0
    } else {
        tp / p.len() as f64
    };
    let recall = if g.is_empty() {
        0.0
    } else {
        tp / g.len() as f64
    };
    IdMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Closed answer vocabularies per question category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDomains {
    pub version: u32,
    pub color: BTreeSet<String>,
    pub shape: BTreeSet<String>,
    pub number: BTreeSet<String>,
    pub yesno: BTreeSet<String>,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

const BUNDLED_DOMAINS: &str = include_str!("../../resources/answer_domains.json");

const NUMBER_WORDS: [&str; 13] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

impl Default for AnswerDomains {
    fn default() -> Self {
        Self::parse(BUNDLED_DOMAINS).expect("bundled answer domains are valid")
    }
}

impl AnswerDomains {
    pub fn parse(json: &str) -> Result<Self, EvalError> {
        let d: Self = serde_json::from_str(json).map_err(|e| EvalError::Domains(e.to_string()))?;
        for set in [&d.color, &d.shape, &d.number, &d.yesno, &d.stopwords] {
            if let Some(w) = set
                .iter()
                .find(|w| w.to_lowercase() != **w || w.trim().is_empty())
            {
                return Err(EvalError::Domains(format!(
                    "entry `{w}` is not a lowercase word"
                )));
            }
        }
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn domain(&self, qc: Category) -> Option<&BTreeSet<String>> {
        match qc {
            Category::Color => Some(&self.color),
            Category::Shape => Some(&self.shape),
            Category::Number => Some(&self.number),
            Category::Yesno => Some(&self.yesno),
            Category::Other => None,
        }
    }

    /// Domain tokens of `text`. Numbers also admit digit strings, and small
    /// number words are rewritten as digits so "3" and "three" agree.
    pub fn restrict(&self, text: &str, qc: Category) -> BTreeSet<String> {
        let Some(domain) = self.domain(qc) else {
            return BTreeSet::new();
        };
        tokenize(text)
            .into_iter()
            .filter(|t| {
                domain.contains(t)
                    || (qc == Category::Number && t.bytes().all(|b| b.is_ascii_digit()))
            })
            .map(|t| match NUMBER_WORDS.iter().position(|w| *w == t) {
                Some(i) if qc == Category::Number => i.to_string(),
                _ => t,
            })
            .collect()
    }

    /// Gold keywords: distinct tokens minus stopwords, unless only stopwords remain.
    pub fn keywords(&self, gold: &str) -> BTreeSet<String> {
        let all: BTreeSet<String> = tokenize(gold).into_iter().collect();
        let content: BTreeSet<String> = all
            .iter()
            .filter(|t| !self.stopwords.contains(*t))
            .cloned()
            .collect();
        if content.is_empty() {
            all
        } else {
            content
        }
    }
}

/// Keyword-overlap accuracy of `candidate` against the gold answer.
///
/// Closed categories score the F1 of the two domain-restricted token sets;
/// other questions, and closed ones whose gold has no domain token, score
/// the fraction of gold keywords present in the candidate.
pub fn a_key(
    candidate: &str,
    gold: &str,
    qc: Category,
    domains: &AnswerDomains,
) -> Result<f64, EvalError> {
    let keywords = domains.keywords(gold);
    if keywords.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    if qc != Category::Other {
        let k = domains.restrict(gold, qc);
        if !k.is_empty() {
            let c = domains.restrict(candidate, qc);
            let tp = c.intersection(&k).count() as f64;
            let p = if c.is_empty() {
                0.0
            } else {
                tp / c.len() as f64
            };
            let r = tp / k.len() as f64;
            return Ok(f1(p, r));
        }
    }
    let cand: HashSet<String> = tokenize(candidate).into_iter().collect();
    Ok(keywords.iter().filter(|k| cand.contains(*k)).count() as f64 / keywords.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub accurate: bool,
    pub explanation: String,
}

pub fn judge_prompt(question: &str, gold: &str, prediction: &str) -> Result<String, EvalError> {
    Ok(render(
        TemplateId::AutoJudge,
        &[
            ("{{question}}", question),
            ("{{answer}}", gold),
            ("{{prediction}}", prediction),
        ],
    )?)
}

/// Asks the judge whether `prediction` matches `gold`.
pub fn judge_answer(
    question: &str,
    gold: &str,
    prediction: &str,
    judge: &dyn LlmBackend,
) -> Result<Judgement, EvalError> {
    let raw = judge.complete(&judge_prompt(question, gold, prediction)?)?;
    let malformed = |message: &str| EvalError::MalformedJudgeOutput {
        raw: raw.clone(),
        message: message.into(),
    };
    let body = strip_code_fence(&raw);
    let value: serde_json::Value = serde_json::from_str(body)
        .or_else(|_| {
            let (s, e) = (body.find('{'), body.rfind('}'));
            match (s, e) {
                (Some(s), Some(e)) if s < e => serde_json::from_str(&body[s..=e]),
                _ => serde_json::from_str(body),
            }
        })
        .map_err(|e| malformed(&e.to_string()))?;
    let accurate = match value.get("accuracy") {
        Some(serde_json::Value::Bool(b)) => *b,
        Some(serde_json::Value::String(s)) if s.trim().eq_ignore_ascii_case("true") => true,
        Some(serde_json::Value::String(s)) if s.trim().eq_ignore_ascii_case("false") => false,
        Some(_) => return Err(malformed("`accuracy` is not \"true\" or \"false\"")),
        None => return Err(malformed("missing `accuracy`")),
    };
    let explanation = value
        .get("explanation")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    Ok(Judgement {
        accurate,
        explanation,
    })
}
