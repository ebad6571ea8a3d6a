//! Text-to-Cypher benchmarking over a reaction knowledge graph.

pub mod cove;
pub mod cypher;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod prompts;
pub mod providers;
pub mod runner;
pub mod tasks;
