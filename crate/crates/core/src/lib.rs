//! Personal memory question answering.
//!
//! Memories are snapshots (image, invocation command, time, location) that are
//! augmented with OCR, a caption and a completed command, embedded, and later
//! retrieved by fusing date, recency, location and semantic signals before an
//! LLM writes the answer.

pub mod answer;
pub mod augment;
pub mod backend;
pub mod config;
pub mod encoding;
pub mod eval;
pub mod fusion;
pub mod http;
pub mod location;
pub mod memory;
pub mod prompts;
pub mod retrieval;
pub mod synthetic;
pub mod temporal;
pub mod text;
