//! Core library for a course-grounded teaching assistant: corpus ingestion,
//! hybrid retrieval, prompt orchestration, model access, usage telemetry
//! and study statistics.

pub mod gateway;
pub mod index;
pub mod ingest;
pub mod orchestrator;
pub mod stats;
pub mod telemetry;
pub mod text;
