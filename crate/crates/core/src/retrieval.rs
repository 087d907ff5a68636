//! The query pipeline: temporal parsing, signal computation, re-ranking,
//! top-K selection and answer generation over the memory store.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::answer::{AnswerError, AnswerGenerator, AnswerResult};
use crate::augment::{AugmentError, AugmentOutcome, Augmenter};
use crate::encoding::{EncodeError, Encoder};
use crate::fusion::{
    compute_signals, rerank, top_k, CandidateSignals, FusionError, FusionWeights, RerankStrategy,
    ScoredCandidate, SignalContext,
};
use crate::location::Bm25Params;
use crate::memory::{AugmentedMemory, MemoryEntry, MemoryStore, RecallQuery, StoreError};
use crate::temporal::{DecayConstants, ParseSource, TemporalParse, TemporalParser};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown memory `{0}`")]
    MissingMemory(String),
    #[error("no answer generator is configured")]
    NoGenerator,
    #[error("encoder dimension {encoder} does not match store dimension {store}")]
    DimensionMismatch { encoder: usize, store: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub strategy: RerankStrategy,
    pub k_retrieve: usize,
    pub k_generate: usize,
    pub decay: DecayConstants,
    pub bm25: Bm25Params,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            strategy: RerankStrategy::Learned,
            k_retrieve: 5,
            k_generate: 3,
            decay: DecayConstants::default(),
            bm25: Bm25Params::default(),
        }
    }
}

impl EngineSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_retrieve == 0 || self.k_generate == 0 {
            return Err("k_retrieve and k_generate must be at least 1".into());
        }
        if self.k_generate > self.k_retrieve {
            return Err(format!(
                "k_generate ({}) must not exceed k_retrieve ({})",
                self.k_generate, self.k_retrieve
            ));
        }
        self.decay.validate().map_err(|e| e.to_string())?;
        self.bm25.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub parse: TemporalParse,
    pub parse_source: ParseSource,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerOutcome {
    pub answer: AnswerResult,
    pub retrieval: Retrieval,
}

/// Immutable query pipeline over a shared store. Safe to use from many threads.
#[derive(Clone)]
pub struct Engine {
    store: Arc<MemoryStore>,
    encoder: Arc<dyn Encoder>,
    parser: TemporalParser,
    weights: Option<FusionWeights>,
    settings: EngineSettings,
    generator: Option<AnswerGenerator>,
}

impl Engine {
    pub fn new(store: Arc<MemoryStore>, encoder: Arc<dyn Encoder>) -> Result<Self, RetrievalError> {
        if store.dim() != encoder.dim() {
            return Err(RetrievalError::DimensionMismatch {
                encoder: encoder.dim(),
                store: store.dim(),
            });
        }
        Ok(Self {
            store,
            encoder,
            parser: TemporalParser::default(),
            weights: Some(FusionWeights::reference()),
            settings: EngineSettings::default(),
            generator: None,
        })
    }

    pub fn with_parser(mut self, parser: TemporalParser) -> Self {
        self.parser = parser;
        self
    }

    pub fn with_weights(mut self, weights: Option<FusionWeights>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_settings(mut self, settings: EngineSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_strategy(mut self, strategy: RerankStrategy) -> Self {
        self.settings.strategy = strategy;
        self
    }

    pub fn with_generator(mut self, generator: Option<AnswerGenerator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn store(&self) -> &Arc<MemoryStore> {
        &self.store
    }

    pub fn encoder(&self) -> &Arc<dyn Encoder> {
        &self.encoder
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn weights(&self) -> Option<&FusionWeights> {
        self.weights.as_ref()
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    /// Hex SHA-256 over everything that influences rankings.
    pub fn fingerprint(&self) -> String {
        let parser = match &self.parser {
            TemporalParser::Rules(_) => "rules",
            TemporalParser::Llm(_) => "llm",
        };
        let material = serde_json::json!({
            "settings": self.settings,
            "weights": self.weights.as_ref().map(|w| w.to_array()),
            "encoder_dim": self.encoder.dim(),
            "parser": parser,
        });
        hex::encode(Sha256::digest(material.to_string().as_bytes()))
    }

    /// Top `k_retrieve` memories of the whole store.
    pub fn retrieve(&self, q: &RecallQuery) -> Result<Retrieval, RetrievalError> {
        let mut r = self.rank(q, self.store.scan(None))?;
        r.candidates.truncate(self.settings.k_retrieve);
        Ok(r)
    }

    /// Full ranking of the given pool of ids.
    pub fn retrieve_from(
        &self,
        q: &RecallQuery,
        ids: &[String],
    ) -> Result<Retrieval, RetrievalError> {
        let pool = ids
            .iter()
            .map(|id| {
                self.store
                    .get_memory(id)
                    .ok_or_else(|| RetrievalError::MissingMemory(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.rank(q, pool)
    }

    /// Ranks `pool`, dropping memories created after the question was asked.
    pub fn rank(
        &self,
        q: &RecallQuery,
        pool: Vec<AugmentedMemory>,
    ) -> Result<Retrieval, RetrievalError> {
        q.validate().map_err(RetrievalError::InvalidQuery)?;
        let outcome = self.parser.parse(q);
        let mut warnings: Vec<String> = outcome.warning.into_iter().collect();
        let before = pool.len();
        let pool: Vec<AugmentedMemory> = pool
            .into_iter()
            .filter(|m| m.entry.created_at <= q.asked_at)
            .collect();
        if pool.len() < before {
            warnings.push(format!(
                "ignored {} memories created after the question",
                before - pool.len()
            ));
        }
        if pool.is_empty() {
            return Ok(Retrieval {
                parse: outcome.parse,
                parse_source: outcome.source,
                warnings,
                candidates: Vec::new(),
            });
        }
        let query_embedding = self.encoder.encode_query(q).map_err(|e| match e {
            EncodeError::EmptyInput => {
                RetrievalError::InvalidQuery("question has no searchable words".into())
            }
            other => other.into(),
        })?;
        let ctx = SignalContext {
            query: q,
            parse: &outcome.parse,
            query_embedding: &query_embedding,
            decay: self.settings.decay,
            bm25: self.settings.bm25,
        };
        let signals = compute_signals(&ctx, &pool, self.encoder.as_ref())?;
        let candidates = pool
            .iter()
            .zip(signals)
            .map(|(m, s)| CandidateSignals {
                memory_id: m.entry.id.clone(),
                created_at: m.entry.created_at,
                signals: s,
            })
            .collect();
        let ranked = rerank(candidates, self.settings.strategy, self.weights.as_ref())?;
        Ok(Retrieval {
            parse: outcome.parse,
            parse_source: outcome.source,
            warnings,
            candidates: ranked,
        })
    }

    /// Retrieves over the whole store and answers from the top `k_generate`.
    pub fn answer(&self, q: &RecallQuery) -> Result<AnswerOutcome, RetrievalError> {
        let retrieval = self.retrieve(q)?;
        self.answer_with(q, retrieval)
    }

    /// Ranks the given pool and answers from its top `k_generate`.
    pub fn answer_from(
        &self,
        q: &RecallQuery,
        ids: &[String],
    ) -> Result<AnswerOutcome, RetrievalError> {
        let retrieval = self.retrieve_from(q, ids)?;
        self.answer_with(q, retrieval)
    }

    fn answer_with(
        &self,
        q: &RecallQuery,
        retrieval: Retrieval,
    ) -> Result<AnswerOutcome, RetrievalError> {
        let generator = self.generator.as_ref().ok_or(RetrievalError::NoGenerator)?;
        let memories = top_k(&retrieval.candidates, self.settings.k_generate)
            .iter()
            .map(|c| {
                self.store
                    .get_memory(&c.memory_id)
                    .ok_or_else(|| RetrievalError::MissingMemory(c.memory_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let answer = if memories.is_empty() {
            AnswerResult {
                id_list: Vec::new(),
                response: "I could not find any matching memory.".into(),
                warnings: vec!["no candidate memories".into()],
                fallback: false,
            }
        } else {
            generator.generate(q, &memories)?
        };
        Ok(AnswerOutcome { answer, retrieval })
    }

    /// Augments, embeds and stores a new memory. Nothing is stored when augmentation fails.
    pub fn record(
        &self,
        entry: MemoryEntry,
        augmenter: Option<&Augmenter>,
    ) -> Result<(AugmentedMemory, Vec<String>), RetrievalError> {
        entry
            .validate()
            .map_err(|e| RetrievalError::Store(StoreError::InvalidEntry(e)))?;
        if self.store.get_memory(&entry.id).is_some() {
            return Err(StoreError::DuplicateId(entry.id).into());
        }
        let Some(augmenter) = augmenter else {
            self.store.put_memory(entry.clone())?;
            return Ok((AugmentedMemory::bare(entry), Vec::new()));
        };
        let outcome = augmenter.augment(&entry)?;
        let memory = self.embed(entry, outcome.clue)?;
        self.store.put_memory(memory.entry.clone())?;
        let stored =
            self.store
                .attach_augmentation(&memory.entry.id, memory.clue, memory.embedding)?;
        let warnings = outcome
            .warnings
            .iter()
            .map(|w| format!("{}: {}", w.task.as_str(), w.message))
            .collect();
        Ok((stored, warnings))
    }

    fn embed(
        &self,
        entry: MemoryEntry,
        clue: crate::memory::AuxiliaryClue,
    ) -> Result<AugmentedMemory, RetrievalError> {
        let mut m = AugmentedMemory {
            entry,
            clue,
            embedding: None,
        };
        m.embedding = Some(self.encoder.encode_memory(&m)?.into_vec());
        Ok(m)
    }

    /// Augments and embeds stored memories in place, `workers` at a time.
    pub fn augment_stored(
        &self,
        ids: &[String],
        augmenter: &Augmenter,
        workers: usize,
    ) -> Vec<(String, Result<AugmentOutcome, RetrievalError>)> {
        let entries: Vec<MemoryEntry> = ids
            .iter()
            .filter_map(|id| self.store.get_memory(id).map(|m| m.entry))
            .collect();
        let outcomes = augmenter.augment_batch(&entries, workers);
        let mut out: Vec<(String, Result<AugmentOutcome, RetrievalError>)> = ids
            .iter()
            .filter(|id| self.store.get_memory(id).is_none())
            .map(|id| (id.clone(), Err(RetrievalError::MissingMemory(id.clone()))))
            .collect();
        for (entry, outcome) in entries.into_iter().zip(outcomes) {
            let id = entry.id.clone();
            let result = outcome.map_err(RetrievalError::from).and_then(|o| {
                let m = self.embed(entry, o.clue.clone())?;
                self.store.attach_augmentation(&id, m.clue, m.embedding)?;
                Ok(o)
            });
            out.push((id, result));
        }
        out
    }

    /// Embeds stored memories that have no embedding yet. Returns how many were embedded.
    pub fn embed_missing(&self) -> Result<usize, RetrievalError> {
        let mut n = 0;
        for m in self
            .store
            .scan(None)
            .into_iter()
            .filter(|m| m.embedding.is_none())
        {
            let e = self.encoder.encode_memory(&m)?;
            self.store
                .attach_augmentation(&m.entry.id, m.clue, Some(e.into_vec()))?;
            n += 1;
        }
        Ok(n)
    }
}
