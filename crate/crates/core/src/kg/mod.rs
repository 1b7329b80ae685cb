//! Node classification on RDF knowledge graphs.
//!
//! Triples are read from N-Triples files ([`TripleStore`]); the labeled
//! entities of a task become `target` nodes and every other term an `other`
//! node ([`build_kg_graph`]). Nodes carry no input features, only a learnable
//! vector each, which four cascaded layers refine before a linear head
//! classifies the targets ([`KgModel`]).

mod bench;
mod graph;
mod model;
mod ntriples;

pub use bench::{
    kg_accuracy, read_split_tsv, run_benchmark, train_kg, KgConfig, KgDataset, KgReport, KgRun, TEST_SPLIT_FILE,
    TRAIN_SPLIT_FILE,
};
pub use graph::{build_kg_graph, build_kg_graph_with, BuildOptions, KgGraph, KgTask, DEFAULT_PRUNE_THRESHOLD, OTHER, TARGET};
pub use model::{kg_layer_relations, KgModel, KgModelConfig};
pub use ntriples::{parse_ntriples, BlankNode, Literal, NamedNode, NamedOrBlankNode, Term, Triple, TripleStore};
