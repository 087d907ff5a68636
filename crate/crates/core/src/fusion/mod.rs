//! Signal computation, fusion, re-ranking and top-K selection.

mod svm;

pub use svm::{
    train_weights, train_weights_with, RankQuery, RankTrainingSet, TrainOptions, TrainReport,
};

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{similarity, Embedding, EncodeError, Encoder};
use crate::location::{pool_location_scores, Bm25Params};
use crate::memory::{AugmentedMemory, RecallQuery};
use crate::temporal::{
    date_match_score, recency_score, DecayConstants, TemporalError, TemporalParse,
};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("non-finite value in fusion input")]
    NonFiniteScore,
    #[error("the learned strategy needs fusion weights")]
    MissingWeights,
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("invalid training query `{0}`: needs at least one positive and one negative")]
    InvalidTrainingQuery(String),
    #[error("no usable training pairs: {0}")]
    DegenerateData(String),
    #[error(
        "solver did not converge after {iterations} iterations (gradient norm {gradient_norm:e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("weights file {path}: {message}")]
    WeightsFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Date,
    Recency,
    Location,
    Semantic,
}

impl Signal {
    pub const ALL: [Signal; 4] = [
        Signal::Date,
        Signal::Recency,
        Signal::Location,
        Signal::Semantic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Signal::Date => "date",
            Signal::Recency => "recency",
            Signal::Location => "location",
            Signal::Semantic => "semantic",
        }
    }
}

/// Per-candidate signals: date match, recency, location and semantic similarity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalVector {
    pub r_t: f64,
    pub r_r: f64,
    pub r_l: f64,
    pub r_s: f64,
}

impl SignalVector {
    pub fn new(r_t: f64, r_r: f64, r_l: f64, r_s: f64) -> Self {
        Self { r_t, r_r, r_l, r_s }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r_t, self.r_r, self.r_l, self.r_s]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn get(&self, s: Signal) -> f64 {
        self.to_array()[s.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Linear fusion weights, stored as `weights.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_t: f64,
    pub w_r: f64,
    pub w_l: f64,
    pub w_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_reg: Option<f64>,
}

const REFERENCE_WEIGHTS: &str = include_str!("../../fixtures/weights.json");

impl FusionWeights {
    pub fn new(w_t: f64, w_r: f64, w_l: f64, w_s: f64) -> Self {
        Self {
            w_t,
            w_r,
            w_l,
            w_s,
            trained_at: None,
            c_reg: None,
        }
    }

    /// The shipped reference weights `(0.08, 0.22, 0.16, 0.53)`.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_WEIGHTS).expect("bundled weights.json is valid")
    }

    /// Weight 1 on `s`, 0 elsewhere.
    pub fn one_hot(s: Signal) -> Self {
        let mut a = [0.0; 4];
        a[s.index()] = 1.0;
        Self::from_array(a)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w_t, self.w_r, self.w_l, self.w_s]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let a = self.to_array();
        if a.iter().any(|w| !w.is_finite()) {
            return Err(FusionError::InvalidWeights("non-finite weight".into()));
        }
        if a.iter().all(|w| *w == 0.0) {
            return Err(FusionError::InvalidWeights("all weights are zero".into()));
        }
        Ok(())
    }

    pub fn negative_signals(&self) -> Vec<Signal> {
        Signal::ALL
            .into_iter()
            .filter(|s| self.to_array()[s.index()] < 0.0)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let err = |message: String| FusionError::WeightsFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let w: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        let err = |message: String| FusionError::WeightsFile {
            path: path.display().to_string(),
            message,
        };
        let text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| err(e.to_string()))
    }
}

/// Weighted sum of the four signals.
pub fn fuse(x: &SignalVector, w: &FusionWeights) -> Result<f64, FusionError> {
    if !x.is_finite() || w.to_array().iter().any(|v| !v.is_finite()) {
        return Err(FusionError::NonFiniteScore);
    }
    Ok(x.to_array()
        .iter()
        .zip(w.to_array())
        .map(|(a, b)| a * b)
        .sum())
}

/// Inputs shared by every candidate of one query.
#[derive(Debug, Clone, Copy)]
pub struct SignalContext<'a> {
    pub query: &'a RecallQuery,
    pub parse: &'a TemporalParse,
    pub query_embedding: &'a Embedding,
    pub decay: DecayConstants,
    pub bm25: Bm25Params,
}

/// Computes the signal vector of every pool member, in pool order.
///
/// Missing memory embeddings are computed with `encoder`. Location scores are
/// normalized over the pool.
pub fn compute_signals(
    ctx: &SignalContext<'_>,
    pool: &[AugmentedMemory],
    encoder: &dyn Encoder,
) -> Result<Vec<SignalVector>, FusionError> {
    let locations: Vec<&str> = pool.iter().map(|m| m.entry.location.as_str()).collect();
    let r_l = pool_location_scores(&locations, &ctx.query.text, ctx.bm25);
    pool.par_iter()
        .zip(r_l.par_iter())
        .map(|(m, &r_l)| {
            let r_t = date_match_score(&m.entry, ctx.parse, ctx.query.timezone_offset_minutes);
            let r_r = recency_score(&m.entry, ctx.query, ctx.parse, &ctx.decay)?;
            let emb = match &m.embedding {
                Some(v) => Embedding::from_unit(v.clone())?,
                None => encoder.encode_memory(m)?,
            };
            let r_s = similarity(&emb, ctx.query_embedding)?;
            Ok(SignalVector { r_t, r_r, r_l, r_s })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankStrategy {
    /// Compare signals sorted in descending order, lexicographically.
    Max,
    /// Unweighted sum of the signals.
    Sum,
    /// Weighted sum with fusion weights.
    #[default]
    Learned,
}

impl std::str::FromStr for RerankStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            "learned" => Ok(Self::Learned),
            other => Err(format!(
                "unknown strategy `{other}` (expected max, sum or learned)"
            )),
        }
    }
}

/// A candidate with its signals, before ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSignals {
    pub memory_id: String,
    pub created_at: i64,
    pub signals: SignalVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub memory_id: String,
    pub created_at: i64,
    pub signals: SignalVector,
    /// Fused score. Under `max` this is the largest signal.
    pub fused: f64,
    /// 1-based position after sorting.
    pub rank: usize,
}

fn desc_sorted(x: &SignalVector) -> [f64; 4] {
    let mut a = x.to_array();
    a.sort_by(|p, q| q.total_cmp(p));
    a
}

/// Ranks candidates. Ties fall back to newer `created_at` first, then smaller id.
pub fn rerank(
    candidates: Vec<CandidateSignals>,
    strategy: RerankStrategy,
    weights: Option<&FusionWeights>,
) -> Result<Vec<ScoredCandidate>, FusionError> {
    let weights = match (strategy, weights) {
        (RerankStrategy::Learned, None) => return Err(FusionError::MissingWeights),
        (RerankStrategy::Learned, Some(w)) => Some(w),
        _ => None,
    };
    let mut scored = candidates
        .into_iter()
        .map(|c| {
            if !c.signals.is_finite() {
                return Err(FusionError::NonFiniteScore);
            }
            let fused = match strategy {
                RerankStrategy::Max => desc_sorted(&c.signals)[0],
                RerankStrategy::Sum => c.signals.to_array().iter().sum(),
                RerankStrategy::Learned => fuse(&c.signals, weights.expect("checked above"))?,
            };
            Ok(ScoredCandidate {
                memory_id: c.memory_id,
                created_at: c.created_at,
                signals: c.signals,
                fused,
                rank: 0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let primary = |a: &ScoredCandidate, b: &ScoredCandidate| -> Ordering {
        match strategy {
            RerankStrategy::Max => {
                let (x, y) = (desc_sorted(&a.signals), desc_sorted(&b.signals));
                x.iter()
                    .zip(&y)
                    .map(|(p, q)| q.total_cmp(p))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            }
            _ => b.fused.total_cmp(&a.fused),
        }
    };
    scored.sort_by(|a, b| {
        primary(a, b)
            .then_with(|| b.created_at.cmp(&a.created_at))
            .then_with(|| a.memory_id.cmp(&b.memory_id))
    });
    for (i, c) in scored.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(scored)
}

/// The first `min(k, n)` ranked candidates.
pub fn top_k(ranked: &[ScoredCandidate], k: usize) -> &[ScoredCandidate] {
    &ranked[..k.min(ranked.len())]
}
