//! Memory and query embeddings.
//!
//! All embeddings are L2-normalized, so the dot-product similarity used for
//! retrieval coincides with cosine similarity and lies in `[-1, 1]`.

mod external;
mod hashing;

pub use external::ExternalEncoder;
pub use hashing::HashingEmbedder;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{AugmentedMemory, RecallQuery};

pub const DEFAULT_DIM: usize = 256;
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("nothing to encode: all text fields are empty")]
    EmptyInput,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("encoder returned an invalid vector: {0}")]
    InvalidVector(String),
}

/// A unit-norm vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EncodeError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncodeError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EncodeError::EmptyInput);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    /// Wraps a vector that is already unit-norm, e.g. one loaded from the store.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EncodeError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncodeError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EncodeError::InvalidVector(format!("norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EncodeError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::from_unit(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Dot product of two embeddings.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64, EncodeError> {
    if a.dim() != b.dim() {
        return Err(EncodeError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Serializes the textual part of a memory in a fixed field order.
///
/// Empty fields are omitted, so an empty return value means the memory has no text.
pub fn memory_text(m: &AugmentedMemory) -> String {
    let fields = [
        ("command", m.entry.invocation_command.as_str()),
        ("completion", m.clue.invocation_completion.as_str()),
        ("caption", m.clue.image_caption.as_str()),
        ("ocr", m.clue.ocr_text.as_str()),
        ("location", m.entry.location.as_str()),
    ];
    fields
        .iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .map(|(k, v)| format!("{k}: {}", v.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The encoder F(.) shared by memories and queries. Immutable once built.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Encodes a batch. `image_refs` is parallel to `texts`.
    fn encode_batch(
        &self,
        texts: &[String],
        image_refs: &[Option<String>],
    ) -> Result<Vec<Embedding>, EncodeError>;

    fn encode_memory(&self, m: &AugmentedMemory) -> Result<Embedding, EncodeError> {
        let text = memory_text(m);
        if text.is_empty() && m.entry.image_ref.is_none() {
            return Err(EncodeError::EmptyInput);
        }
        let mut out = self.encode_batch(&[text], std::slice::from_ref(&m.entry.image_ref))?;
        out.pop()
            .ok_or_else(|| EncodeError::InvalidVector("empty batch result".into()))
    }

    fn encode_query(&self, q: &RecallQuery) -> Result<Embedding, EncodeError> {
        if q.text.trim().is_empty() {
            return Err(EncodeError::EmptyInput);
        }
        let mut out = self.encode_batch(std::slice::from_ref(&q.text), &[None])?;
        out.pop()
            .ok_or_else(|| EncodeError::InvalidVector("empty batch result".into()))
    }
}
