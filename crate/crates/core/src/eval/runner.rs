use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    a_key, id_detection_metrics, judge_answer, ndcg_at_k, recall_at_k, AnswerDomains,
    BenchmarkCase, Category, EvalError, IdMetrics,
};
use crate::backend::LlmBackend;
use crate::fusion::{RankQuery, RankTrainingSet};
use crate::retrieval::{Engine, RetrievalError};

#[derive(Clone)]
pub struct BenchmarkOptions {
    /// Also generate answers and score them.
    pub with_answers: bool,
    pub judge: Option<Arc<dyn LlmBackend>>,
    pub workers: usize,
    pub domains: AnswerDomains,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            with_answers: false,
            judge: None,
            workers: 4,
            domains: AnswerDomains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub question_id: String,
    pub category: Category,
    pub ranked_ids: Vec<String>,
    pub recall_at_1: f64,
    pub recall_at_3: f64,
    pub recall_at_5: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_key: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judged_accurate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_metrics: Option<IdMetrics>,
}

/// Macro averages over cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub cases: usize,
    pub recall_at_1: f64,
    pub recall_at_3: f64,
    pub recall_at_5: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_key: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_llm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_f1: Option<f64>,
}

impl MetricBlock {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a CaseRecord>) -> Self {
        let records: Vec<&CaseRecord> = records.into_iter().collect();
        let n = records.len();
        let mean = |f: &dyn Fn(&CaseRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(|r| f(r)).sum::<f64>() / n as f64
            }
        };
        let opt_mean = |f: &dyn Fn(&CaseRecord) -> Option<f64>| {
            let vals: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            cases: n,
            recall_at_1: mean(&|r| r.recall_at_1),
            recall_at_3: mean(&|r| r.recall_at_3),
            recall_at_5: mean(&|r| r.recall_at_5),
            ndcg_at_3: mean(&|r| r.ndcg_at_3),
            ndcg_at_5: mean(&|r| r.ndcg_at_5),
            a_key: opt_mean(&|r| r.a_key),
            a_llm: opt_mean(&|r| r.judged_accurate.map(|b| if b { 1.0 } else { 0.0 })),
            id_precision: opt_mean(&|r| r.id_metrics.map(|m| m.precision)),
            id_recall: opt_mean(&|r| r.id_metrics.map(|m| m.recall)),
            id_f1: opt_mean(&|r| r.id_metrics.map(|m| m.f1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricBlock,
    pub strategy: String,
    pub config_fingerprint: String,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub records: Vec<CaseRecord>,
}

impl EvalReport {
    /// Metrics over the cases whose record satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(&CaseRecord) -> bool) -> MetricBlock {
        MetricBlock::from_records(self.records.iter().filter(|r| keep(r)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn cases_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Writes `report.json` and `cases.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("cases.jsonl"), self.cases_jsonl())?;
        Ok(())
    }
}

fn retrieval_error(question_id: &str, e: RetrievalError) -> EvalError {
    match e {
        RetrievalError::MissingMemory(memory_id) => EvalError::MissingMemory {
            question_id: question_id.to_string(),
            memory_id,
        },
        other => EvalError::Retrieval {
            question_id: question_id.to_string(),
            message: other.to_string(),
        },
    }
}

fn evaluate_case(
    case: &BenchmarkCase,
    engine: &Engine,
    opts: &BenchmarkOptions,
) -> Result<CaseRecord, EvalError> {
    let q = case.recall_query();
    let (retrieval, answer) = if opts.with_answers {
        let out = engine
            .answer_from(&q, &case.candidate_ids)
            .map_err(|e| retrieval_error(&case.question_id, e))?;
        (out.retrieval, Some(out.answer))
    } else {
        let r = engine
            .retrieve_from(&q, &case.candidate_ids)
            .map_err(|e| retrieval_error(&case.question_id, e))?;
        (r, None)
    };
    let ranked: Vec<String> = retrieval
        .candidates
        .iter()
        .map(|c| c.memory_id.clone())
        .collect();
    let pos = &case.positive_ids;
    let mut record = CaseRecord {
        question_id: case.question_id.clone(),
        category: case.category,
        ranked_ids: ranked
            .iter()
            .take(engine.settings().k_retrieve)
            .cloned()
            .collect(),
        recall_at_1: recall_at_k(&ranked, pos, 1)?,
        recall_at_3: recall_at_k(&ranked, pos, 3)?,
        recall_at_5: recall_at_k(&ranked, pos, 5)?,
        ndcg_at_3: ndcg_at_k(&ranked, pos, 3)?,
        ndcg_at_5: ndcg_at_k(&ranked, pos, 5)?,
        answer: None,
        predicted_ids: None,
        a_key: None,
        judged_accurate: None,
        id_metrics: None,
    };
    if let Some(a) = answer {
        record.a_key = Some(a_key(
            &a.response,
            &case.gold_answer,
            case.category,
            &opts.domains,
        )?);
        record.id_metrics = Some(id_detection_metrics(&a.id_list, pos));
        if let Some(judge) = &opts.judge {
            let j = judge_answer(
                &case.question,
                &case.gold_answer,
                &a.response,
                judge.as_ref(),
            )?;
            record.judged_accurate = Some(j.accurate);
        }
        record.predicted_ids = Some(a.id_list);
        record.answer = Some(a.response);
    }
    Ok(record)
}

/// Runs every case against `engine`. Records keep input order, so reports are
/// reproducible for a fixed engine and mock backends.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
    engine: &Engine,
    opts: &BenchmarkOptions,
) -> Result<EvalReport, EvalError> {
    for case in cases {
        case.validate()?;
        if let Some(id) = case
            .candidate_ids
            .iter()
            .find(|id| engine.store().get_memory(id).is_none())
        {
            return Err(EvalError::MissingMemory {
                question_id: case.question_id.clone(),
                memory_id: id.clone(),
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool");
    let records = pool.install(|| {
        cases
            .par_iter()
            .map(|c| evaluate_case(c, engine, opts))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let fingerprint_material = serde_json::json!({
        "engine": engine.fingerprint(),
        "with_answers": opts.with_answers,
        "judge": opts.judge.as_ref().map(|j| j.name().to_string()),
        "domains_version": opts.domains.version,
    });
    let mut notes = vec![
        "recall@k divides by the number of positives of each case, then averages over cases"
            .to_string(),
        "nDCG@k uses binary gains".to_string(),
    ];
    if opts.with_answers {
        notes.push(
            "a_key scores open questions by gold keyword recall instead of a learned recall score"
                .to_string(),
        );
    }
    let strategy = serde_json::to_value(engine.settings().strategy)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Ok(EvalReport {
        metrics: MetricBlock::from_records(&records),
        strategy,
        config_fingerprint: hex::encode(Sha256::digest(
            fingerprint_material.to_string().as_bytes(),
        )),
        notes,
        records,
    })
}

/// Signal vectors of every case pool, labelled by positivity, for RankSVM.
///
/// The engine's strategy and weights do not matter: only raw signals are kept.
pub fn rank_training_set(
    cases: &[BenchmarkCase],
    engine: &Engine,
) -> Result<RankTrainingSet, EvalError> {
    let queries = cases
        .par_iter()
        .map(|case| {
            case.validate()?;
            let retrieval = engine
                .retrieve_from(&case.recall_query(), &case.candidate_ids)
                .map_err(|e| retrieval_error(&case.question_id, e))?;
            Ok(RankQuery {
                query_id: case.question_id.clone(),
                items: retrieval
                    .candidates
                    .into_iter()
                    .map(|c| (c.signals, case.positive_ids.contains(&c.memory_id)))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut set = RankTrainingSet::new();
    for q in queries {
        let id = q.query_id.clone();
        set.add(q).map_err(|e| EvalError::InvalidCase {
            question_id: id,
            message: e.to_string(),
        })?;
    }
    Ok(set)
}
