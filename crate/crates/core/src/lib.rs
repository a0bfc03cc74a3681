//! Group-by aggregates over acyclic multi-way equijoins, computed on a
//! multiplicity-annotated data graph instead of a materialized join.
//!
//! The pipeline has three stages: relations are compiled into a typed,
//! weighted DAG in CSR layout ([`datagraph`]), the graph is traversed
//! depth-first from every source node collecting per-group partial
//! aggregates ([`traversal`]), and the partials are combined into output
//! groups by a prefix-join over path identifiers ([`resultgen`]).
//!
//! Instrumented hash-join baselines ([`baseline`]) execute the same query
//! the conventional way and double as the correctness oracle.

pub mod aggregates;
pub mod baseline;
pub mod datagen;
pub mod datagraph;
pub mod error;
pub mod query_model;
pub mod relstore;
pub mod resultgen;
pub mod sqlfront;
pub mod stats;
pub mod traversal;
pub mod value;

pub use error::{Error, Result};
pub use relstore::{AttributeRef, CountedRelation, Relation};
pub use resultgen::{run_query, Engine, EngineOptions, GroupResult};
pub use sqlfront::{parse_query, parse_sql, Aggregate, QuerySpec};
pub use stats::RunStats;
pub use value::Value;
