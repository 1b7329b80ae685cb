//! Knowledge graphs as two-type heterogeneous graphs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use super::ntriples::{Term, Triple, TripleStore};
use crate::error::{Error, Result};
use crate::graph::{EdgeSet, HeteroGraph, NodeSet, NodeType, NodeTypeDef, RelationDef, Schema};
use crate::numeric::Tensor;

/// Nodes whose class is predicted.
pub const TARGET: NodeType = NodeType(0);
/// Every other entity or literal.
pub const OTHER: NodeType = NodeType(1);

/// Default minimum total degree an `other` node needs to survive pruning.
pub const DEFAULT_PRUNE_THRESHOLD: usize = 2;

/// Labeled target entities split into training and test masks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KgTask {
    /// Target IRIs; row `k` of the target node type is `entities[k]`.
    pub entities: Vec<String>,
    pub labels: Vec<usize>,
    /// Class names, sorted.
    pub classes: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl KgTask {
    /// Builds the task from `(entity, class)` rows of both splits; training
    /// rows come first.
    pub fn new(train: &[(String, String)], test: &[(String, String)]) -> Result<Self> {
        let classes: Vec<String> = {
            let mut c: Vec<String> = train.iter().chain(test).map(|(_, c)| c.clone()).collect();
            c.sort();
            c.dedup();
            c
        };
        let mut seen = HashSet::new();
        let mut task = KgTask {
            classes,
            ..Default::default()
        };
        for (split, rows) in [(0, train), (1, test)] {
            for (e, c) in rows {
                if !seen.insert(e.as_str()) {
                    return Err(Error::Config(format!("entity {e} appears twice in the task splits")));
                }
                let k = task.entities.len();
                task.entities.push(e.clone());
                task.labels.push(task.classes.binary_search(c).expect("class collected above"));
                if split == 0 {
                    task.train.push(k);
                } else {
                    task.test.push(k);
                }
            }
        }
        Ok(task)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    pub prune_threshold: usize,
    /// Relations with fewer edges than this are merged into one catch-all
    /// relation per endpoint type pair; 0 disables merging.
    pub merge_below: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            merge_below: 0,
        }
    }
}

/// The graph plus the term behind every `other` row.
#[derive(Clone, Debug)]
pub struct KgGraph {
    pub graph: HeteroGraph,
    pub other_terms: Vec<Term>,
}

fn type_name(t: NodeType) -> &'static str {
    if t == TARGET {
        "target"
    } else {
        "other"
    }
}

fn subject_term(t: &Triple) -> Term {
    t.subject.clone().into()
}

/// See [`build_kg_graph_with`]; relation merging is off.
pub fn build_kg_graph(store: &TripleStore, task: &KgTask, prune_threshold: usize) -> Result<KgGraph> {
    build_kg_graph_with(
        store,
        task,
        &BuildOptions {
            prune_threshold,
            merge_below: 0,
        },
    )
}

/// Target entities become `target` nodes in task order, every other term an
/// `other` node in first-appearance order. Duplicate triples are dropped;
/// `other` nodes with total degree below the threshold are removed with their
/// triples in one pass. Each predicate yields a forward and an inverse
/// relation for every endpoint type pair it connects. Edge features are the
/// constant 1; node features are empty.
pub fn build_kg_graph_with(store: &TripleStore, task: &KgTask, opts: &BuildOptions) -> Result<KgGraph> {
    let mut target_row: HashMap<Term, usize> = HashMap::new();
    for (k, e) in task.entities.iter().enumerate() {
        let iri = oxrdf::NamedNode::new_unchecked(e.as_str());
        target_row.insert(Term::NamedNode(iri), k);
    }

    let mut seen = HashSet::new();
    let triples: Vec<&Triple> = store.triples.iter().filter(|t| seen.insert(*t)).collect();

    let mut degree: HashMap<Term, usize> = HashMap::new();
    let mut present = vec![false; task.entities.len()];
    for t in &triples {
        for term in [subject_term(t), t.object.clone()] {
            if let Some(&k) = target_row.get(&term) {
                present[k] = true;
            } else {
                *degree.entry(term).or_default() += 1;
            }
        }
    }
    if let Some(k) = present.iter().position(|p| !p) {
        return Err(Error::Reference(format!("target {} does not occur in the triples", task.entities[k])));
    }

    let mut other_row: HashMap<Term, usize> = HashMap::new();
    let mut other_terms = Vec::new();
    let mut locate = |term: Term| -> Option<(NodeType, usize)> {
        if let Some(&k) = target_row.get(&term) {
            return Some((TARGET, k));
        }
        if degree[&term] < opts.prune_threshold {
            return None;
        }
        let next = other_terms.len();
        let row = *other_row.entry(term.clone()).or_insert_with(|| {
            other_terms.push(term);
            next
        });
        Some((OTHER, row))
    };

    // (predicate, inverse, src type, dst type) -> endpoint lists
    let mut groups: BTreeMap<(String, bool, NodeType, NodeType), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for t in &triples {
        let (Some((ts, s)), Some((to, o))) = (locate(subject_term(t)), locate(t.object.clone())) else {
            continue;
        };
        let p = t.predicate.as_str().to_string();
        let fwd = groups.entry((p.clone(), false, ts, to)).or_default();
        fwd.0.push(s);
        fwd.1.push(o);
        let inv = groups.entry((p, true, to, ts)).or_default();
        inv.0.push(o);
        inv.1.push(s);
    }

    let mut merged: BTreeMap<(NodeType, NodeType), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut relations = Vec::new();
    let mut edges = Vec::new();
    for ((p, inverse, src, dst), (s, d)) in groups {
        if s.len() < opts.merge_below {
            let m = merged.entry((src, dst)).or_default();
            m.0.extend(s);
            m.1.extend(d);
            continue;
        }
        let prefix = if inverse { "inverse " } else { "" };
        relations.push(RelationDef {
            name: format!("{prefix}<{p}> {}>{}", type_name(src), type_name(dst)),
            src,
            dst,
            edge_dim: 1,
        });
        edges.push((s, d));
    }
    for ((src, dst), (s, d)) in merged {
        relations.push(RelationDef {
            name: format!("merged {}>{}", type_name(src), type_name(dst)),
            src,
            dst,
            edge_dim: 1,
        });
        edges.push((s, d));
    }

    let schema = Schema::new(
        vec![
            NodeTypeDef {
                name: "target".into(),
                feature_dim: 0,
            },
            NodeTypeDef {
                name: "other".into(),
                feature_dim: 0,
            },
        ],
        relations,
    )?;
    let nodes = vec![
        NodeSet::new(Tensor::zeros(task.entities.len(), 0)),
        NodeSet::new(Tensor::zeros(other_terms.len(), 0)),
    ];
    let edges = edges
        .into_iter()
        .map(|(s, d)| {
            let n = s.len();
            EdgeSet::new(s, d, Tensor::filled(n, 1, 1.0))
        })
        .collect();
    let graph = HeteroGraph::new(Arc::new(schema), nodes, edges)?;
    Ok(KgGraph { graph, other_terms })
}
