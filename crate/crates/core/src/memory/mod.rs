//! Memory entries, their augmentations, recall queries and the persistent store.

mod store;

pub use store::{MemoryStore, StoreError, TimeWindow};

use serde::{Deserialize, Serialize};

/// A user-initiated memory snapshot: image, invocation command, timestamp and location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    /// Opaque reference to the snapshot image. Pixels are never decoded here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub invocation_command: String,
    /// UTC epoch seconds.
    pub created_at: i64,
    #[serde(default)]
    pub location: String,
}

impl MemoryEntry {
    pub fn new(
        id: impl Into<String>,
        invocation_command: impl Into<String>,
        created_at: i64,
        location: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            image_ref: None,
            invocation_command: invocation_command.into(),
            created_at,
            location: location.into(),
        }
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.image_ref = Some(image_ref.into());
        self
    }

    /// Checks the entry invariants, returning a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id must not be empty".into());
        }
        if self.invocation_command.trim().is_empty() {
            return Err("invocation_command must not be empty".into());
        }
        if self.created_at <= 0 {
            return Err(format!(
                "created_at must be positive, got {}",
                self.created_at
            ));
        }
        Ok(())
    }
}

/// Textual clues derived from the snapshot image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryClue {
    pub ocr_text: String,
    pub image_caption: String,
    pub invocation_completion: String,
}

impl AuxiliaryClue {
    pub fn is_empty(&self) -> bool {
        self.ocr_text.is_empty()
            && self.image_caption.is_empty()
            && self.invocation_completion.is_empty()
    }
}

/// A memory entry together with its clue and (optionally) its embedding.
///
/// Bare entries are represented with an empty clue and no embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMemory {
    pub entry: MemoryEntry,
    pub clue: AuxiliaryClue,
    pub embedding: Option<Vec<f64>>,
}

impl AugmentedMemory {
    pub fn bare(entry: MemoryEntry) -> Self {
        Self {
            entry,
            clue: AuxiliaryClue::default(),
            embedding: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.entry.id
    }

    pub fn is_augmented(&self) -> bool {
        !self.clue.is_empty() || self.embedding.is_some()
    }
}

/// A recall question asked at a given instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallQuery {
    pub text: String,
    /// UTC epoch seconds.
    pub asked_at: i64,
    /// Offset of the asker's local time from UTC, used to resolve calendar words.
    #[serde(default)]
    pub timezone_offset_minutes: i32,
}

impl RecallQuery {
    pub fn new(text: impl Into<String>, asked_at: i64) -> Self {
        Self {
            text: text.into(),
            asked_at,
            timezone_offset_minutes: 0,
        }
    }

    pub fn with_offset(mut self, minutes: i32) -> Self {
        self.timezone_offset_minutes = minutes;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("question text must not be empty".into());
        }
        if self.asked_at <= 0 {
            return Err(format!("asked_at must be positive, got {}", self.asked_at));
        }
        Ok(())
    }
}

/// One line of `memories.jsonl`.
///
/// The four augmentation fields are optional; a line that carries none of them
/// describes a bare entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    pub invocation_command: String,
    pub created_at: i64,
    #[serde(default)]
    pub location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation_completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl MemoryRecord {
    pub fn entry(&self) -> MemoryEntry {
        MemoryEntry {
            id: self.id.clone(),
            image_ref: self.image_ref.clone(),
            invocation_command: self.invocation_command.clone(),
            created_at: self.created_at,
            location: self.location.clone(),
        }
    }

    /// The clue carried by this record, if any of its fields are present.
    pub fn clue(&self) -> Option<AuxiliaryClue> {
        if self.ocr_text.is_none()
            && self.image_caption.is_none()
            && self.invocation_completion.is_none()
        {
            return None;
        }
        Some(AuxiliaryClue {
            ocr_text: self.ocr_text.clone().unwrap_or_default(),
            image_caption: self.image_caption.clone().unwrap_or_default(),
            invocation_completion: self.invocation_completion.clone().unwrap_or_default(),
        })
    }

    pub fn into_memory(self) -> AugmentedMemory {
        let clue = self.clue().unwrap_or_default();
        let entry = self.entry();
        AugmentedMemory {
            entry,
            clue,
            embedding: self.embedding,
        }
    }
}

impl From<&AugmentedMemory> for MemoryRecord {
    fn from(m: &AugmentedMemory) -> Self {
        let augmented = m.is_augmented();
        let field = |s: &String| augmented.then(|| s.clone());
        Self {
            id: m.entry.id.clone(),
            image_ref: m.entry.image_ref.clone(),
            invocation_command: m.entry.invocation_command.clone(),
            created_at: m.entry.created_at,
            location: m.entry.location.clone(),
            ocr_text: field(&m.clue.ocr_text),
            image_caption: field(&m.clue.image_caption),
            invocation_completion: field(&m.clue.invocation_completion),
            embedding: m.embedding.clone(),
        }
    }
}
