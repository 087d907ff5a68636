//! HTTP service for memory question answering.

pub mod api;

pub use api::{router, serve, AppState};
