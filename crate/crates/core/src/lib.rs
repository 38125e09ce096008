//! Corporate ownership graph built from LEI registry data, with pattern
//! detection for profit-shifting structures, descriptive analytics and
//! city-area enrichment over SPARQL.

pub mod analytics;
pub mod bundle;
pub mod cli;
pub mod federation;
pub mod ingest;
pub mod linking;
pub mod model;
pub mod par;
pub mod patterns;
pub mod synth;
pub mod table;
pub mod traversal;

#[cfg(test)]
mod testutil;

pub use model::{Company, EdgeKind, GraphStore, Lei, NodeId};
