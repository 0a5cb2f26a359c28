//! Parallel-corpus filtering, synthetic-data selection, ensemble reranking
//! and chrF scoring.

pub mod dedup;
pub mod ensemble;
pub mod filters;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod synth;
pub mod text;
