//! Command-line side of the compliance engine: file formats, persisted
//! state, follow-up delivery and the run pipeline.

pub mod config;
pub mod dispatch;
pub mod export;
pub mod ingest;
pub mod pipeline;
pub mod state;
