//! Knowledge ingestion: parse four heterogeneous triple sources, normalize
//! concepts, and filter to the task-relevant graph.

pub mod build;
pub mod graph;
pub mod parsers;
pub mod triple;

pub use build::{build_graph, BuildReport, DEFAULT_RELATION_CAP};
pub use graph::{Edge, KnowledgeGraph};
pub use parsers::{parse_encyclopedic, parse_flat, parse_scene_graph, ParseStats};
pub use triple::{normalize_concept, normalize_relation, ConceptSet, StopWords, Triple, TripleSource};
