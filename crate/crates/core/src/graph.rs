//! Directed heterogeneous graphs.
//!
//! A [`Schema`] fixes the node types and, for every relation type, its source
//! and destination node type. A [`HeteroGraph`] holds, per node type, a dense
//! feature matrix (node identity is `(type, row)`) and, per relation type, a
//! coordinate list of edges with one edge-feature row per edge.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeType(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeTypeDef {
    pub name: String,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationDef {
    pub name: String,
    pub src: NodeType,
    pub dst: NodeType,
    pub edge_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<NodeTypeDef>,
    relations: Vec<RelationDef>,
}

impl Schema {
    pub fn new(node_types: Vec<NodeTypeDef>, relations: Vec<RelationDef>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &node_types {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate node type `{}`", t.name)));
            }
        }
        let mut seen = HashSet::new();
        for r in &relations {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Schema(format!("duplicate relation type `{}`", r.name)));
            }
            for end in [r.src, r.dst] {
                if end.0 >= node_types.len() {
                    return Err(Error::Schema(format!(
                        "relation `{}` references unknown node type {}",
                        r.name, end.0
                    )));
                }
            }
        }
        Ok(Schema { node_types, relations })
    }

    pub fn node_types(&self) -> &[NodeTypeDef] {
        &self.node_types
    }

    pub fn relations(&self) -> &[RelationDef] {
        &self.relations
    }

    pub fn node_type(&self, name: &str) -> Option<NodeType> {
        self.node_types.iter().position(|t| t.name == name).map(NodeType)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r.name == name).map(RelationId)
    }

    pub fn node_def(&self, t: NodeType) -> &NodeTypeDef {
        &self.node_types[t.0]
    }

    pub fn relation_def(&self, r: RelationId) -> &RelationDef {
        &self.relations[r.0]
    }

    /// Source node type of a relation.
    pub fn dom(&self, r: RelationId) -> NodeType {
        self.relations[r.0].src
    }

    /// Destination node type of a relation.
    pub fn ran(&self, r: RelationId) -> NodeType {
        self.relations[r.0].dst
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len()).map(RelationId)
    }

    pub fn node_type_ids(&self) -> impl Iterator<Item = NodeType> {
        (0..self.node_types.len()).map(NodeType)
    }

    /// Relations whose destination type is `t`.
    pub fn relations_into(&self, t: NodeType) -> Vec<RelationId> {
        self.relation_ids().filter(|&r| self.ran(r) == t).collect()
    }
}

#[derive(Clone, Debug)]
pub struct NodeSet {
    pub features: Tensor<f64>,
    /// Index of the originating graph, for batched graphs.
    pub graph_id: Vec<usize>,
}

impl NodeSet {
    pub fn new(features: Tensor<f64>) -> Self {
        let n = features.rows();
        NodeSet {
            features,
            graph_id: vec![0; n],
        }
    }

    pub fn count(&self) -> usize {
        self.features.rows()
    }
}

/// Edges grouped by destination: `edges[offsets[i]..offsets[i + 1]]` are the
/// edge rows entering node `i`, in insertion order.
#[derive(Clone, Debug)]
struct DstIndex {
    offsets: Vec<usize>,
    edges: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EdgeSet {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub features: Tensor<f64>,
    by_dst: OnceLock<DstIndex>,
}

impl EdgeSet {
    pub fn new(src: Vec<usize>, dst: Vec<usize>, features: Tensor<f64>) -> Self {
        EdgeSet {
            src: src.into(),
            dst: dst.into(),
            features,
            by_dst: OnceLock::new(),
        }
    }

    pub fn empty(edge_dim: usize) -> Self {
        Self::new(Vec::new(), Vec::new(), Tensor::zeros(0, edge_dim))
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn index(&self, num_dst: usize) -> &DstIndex {
        self.by_dst.get_or_init(|| {
            let mut offsets = vec![0usize; num_dst + 1];
            for &d in self.dst.iter() {
                offsets[d + 1] += 1;
            }
            for i in 0..num_dst {
                offsets[i + 1] += offsets[i];
            }
            let mut fill = offsets.clone();
            let mut edges = vec![0; self.dst.len()];
            for (e, &d) in self.dst.iter().enumerate() {
                edges[fill[d]] = e;
                fill[d] += 1;
            }
            DstIndex { offsets, edges }
        })
    }
}

/// One broken invariant found by [`HeteroGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NodeTypeCount { expected: usize, found: usize },
    RelationCount { expected: usize, found: usize },
    NodeFeatureDim { node_type: String, expected: usize, found: usize },
    GraphIdLength { node_type: String, nodes: usize, found: usize },
    EndpointLength { relation: String, src: usize, dst: usize },
    SourceOutOfRange { relation: String, edge: usize, index: usize, count: usize },
    DestinationOutOfRange { relation: String, edge: usize, index: usize, count: usize },
    EdgeFeatureRows { relation: String, edges: usize, rows: usize },
    EdgeFeatureDim { relation: String, expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug)]
pub struct HeteroGraph {
    schema: Arc<Schema>,
    nodes: Vec<NodeSet>,
    edges: Vec<EdgeSet>,
}

impl HeteroGraph {
    /// Assembles a graph without checking it; see [`HeteroGraph::validate`].
    pub fn from_parts(schema: Arc<Schema>, nodes: Vec<NodeSet>, edges: Vec<EdgeSet>) -> Self {
        HeteroGraph { schema, nodes, edges }
    }

    /// Assembles a graph and rejects it if any invariant is broken.
    pub fn new(schema: Arc<Schema>, nodes: Vec<NodeSet>, edges: Vec<EdgeSet>) -> Result<Self> {
        let g = Self::from_parts(schema, nodes, edges);
        let v = g.validate();
        if v.is_empty() {
            Ok(g)
        } else {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(Error::Schema(msg.join("; ")))
        }
    }

    /// Graph with no nodes or edges.
    pub fn empty(schema: Arc<Schema>) -> Self {
        let nodes = schema
            .node_types()
            .iter()
            .map(|t| NodeSet::new(Tensor::zeros(0, t.feature_dim)))
            .collect();
        let edges = schema.relations().iter().map(|r| EdgeSet::empty(r.edge_dim)).collect();
        HeteroGraph { schema, nodes, edges }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn nodes(&self, t: NodeType) -> &NodeSet {
        &self.nodes[t.0]
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        self.nodes[t.0].count()
    }

    pub fn edges(&self, r: RelationId) -> &EdgeSet {
        &self.edges[r.0]
    }

    pub fn edge_count(&self, r: RelationId) -> usize {
        self.edges[r.0].len()
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().map(NodeSet::count).sum()
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().map(EdgeSet::len).sum()
    }

    /// Every broken invariant; empty iff the graph is consistent with its schema.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let s = &self.schema;
        if self.nodes.len() != s.node_types().len() {
            out.push(Violation::NodeTypeCount {
                expected: s.node_types().len(),
                found: self.nodes.len(),
            });
        }
        if self.edges.len() != s.relations().len() {
            out.push(Violation::RelationCount {
                expected: s.relations().len(),
                found: self.edges.len(),
            });
        }
        for (def, set) in s.node_types().iter().zip(&self.nodes) {
            if set.features.cols() != def.feature_dim {
                out.push(Violation::NodeFeatureDim {
                    node_type: def.name.clone(),
                    expected: def.feature_dim,
                    found: set.features.cols(),
                });
            }
            if set.graph_id.len() != set.count() {
                out.push(Violation::GraphIdLength {
                    node_type: def.name.clone(),
                    nodes: set.count(),
                    found: set.graph_id.len(),
                });
            }
        }
        for (def, set) in s.relations().iter().zip(&self.edges) {
            let n_src = self.nodes.get(def.src.0).map_or(0, NodeSet::count);
            let n_dst = self.nodes.get(def.dst.0).map_or(0, NodeSet::count);
            if set.src.len() != set.dst.len() {
                out.push(Violation::EndpointLength {
                    relation: def.name.clone(),
                    src: set.src.len(),
                    dst: set.dst.len(),
                });
            }
            for (e, (&j, &i)) in set.src.iter().zip(set.dst.iter()).enumerate() {
                if j >= n_src {
                    out.push(Violation::SourceOutOfRange {
                        relation: def.name.clone(),
                        edge: e,
                        index: j,
                        count: n_src,
                    });
                }
                if i >= n_dst {
                    out.push(Violation::DestinationOutOfRange {
                        relation: def.name.clone(),
                        edge: e,
                        index: i,
                        count: n_dst,
                    });
                }
            }
            if set.features.rows() != set.src.len() {
                out.push(Violation::EdgeFeatureRows {
                    relation: def.name.clone(),
                    edges: set.src.len(),
                    rows: set.features.rows(),
                });
            }
            if set.features.cols() != def.edge_dim {
                out.push(Violation::EdgeFeatureDim {
                    relation: def.name.clone(),
                    expected: def.edge_dim,
                    found: set.features.cols(),
                });
            }
        }
        out
    }

    /// `(source index, edge row)` of every `r`-edge entering node `i`, in
    /// insertion order.
    pub fn in_neighbors(&self, r: RelationId, i: usize) -> Result<Vec<(usize, usize)>> {
        let n = self.node_count(self.schema.ran(r));
        if i >= n {
            return Err(Error::Range {
                what: format!("destination of `{}`", self.schema.relation_def(r).name),
                index: i,
                len: n,
            });
        }
        let set = &self.edges[r.0];
        let idx = set.index(n);
        Ok(idx.edges[idx.offsets[i]..idx.offsets[i + 1]]
            .iter()
            .map(|&e| (set.src[e], e))
            .collect())
    }

    /// Block-diagonal union: node indices of later graphs are offset by the
    /// node counts of the graphs before them, and each node remembers the
    /// position of its graph in `graphs`.
    pub fn disjoint_union(graphs: &[&HeteroGraph]) -> Result<HeteroGraph> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Contract("disjoint union of no graphs".into()))?;
        let schema = first.schema.clone();
        for g in graphs {
            if !Arc::ptr_eq(&g.schema, &schema) && *g.schema != *schema {
                return Err(Error::Schema("disjoint union over differing schemas".into()));
            }
        }
        let nt = schema.node_types().len();
        let mut offsets = vec![vec![0usize; nt]; graphs.len()];
        for gi in 1..graphs.len() {
            for t in 0..nt {
                offsets[gi][t] = offsets[gi - 1][t] + graphs[gi - 1].nodes[t].count();
            }
        }
        let nodes = (0..nt)
            .map(|t| {
                let parts: Vec<&Tensor<f64>> = graphs.iter().map(|g| &g.nodes[t].features).collect();
                let mut features = Tensor::vstack(&parts)?;
                if parts.iter().all(|p| p.rows() == 0) {
                    features = Tensor::zeros(0, schema.node_types()[t].feature_dim);
                }
                let graph_id = graphs
                    .iter()
                    .enumerate()
                    .flat_map(|(gi, g)| std::iter::repeat_n(gi, g.nodes[t].count()))
                    .collect();
                Ok(NodeSet { features, graph_id })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = schema
            .relations()
            .iter()
            .enumerate()
            .map(|(r, def)| {
                let mut src = Vec::new();
                let mut dst = Vec::new();
                for (gi, g) in graphs.iter().enumerate() {
                    let set = &g.edges[r];
                    src.extend(set.src.iter().map(|&j| j + offsets[gi][def.src.0]));
                    dst.extend(set.dst.iter().map(|&i| i + offsets[gi][def.dst.0]));
                }
                let parts: Vec<&Tensor<f64>> = graphs.iter().map(|g| &g.edges[r].features).collect();
                let features = if src.is_empty() {
                    Tensor::zeros(0, def.edge_dim)
                } else {
                    Tensor::vstack(&parts)?
                };
                Ok(EdgeSet::new(src, dst, features))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HeteroGraph { schema, nodes, edges })
    }

    /// Relabels nodes: `perm[t][old] = new` for every node type. Edge order is kept.
    pub fn permute_nodes(&self, perm: &[Vec<usize>]) -> Result<HeteroGraph> {
        if perm.len() != self.nodes.len() {
            return Err(Error::Contract("one permutation per node type required".into()));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (set, p) in self.nodes.iter().zip(perm) {
            if p.len() != set.count() {
                return Err(Error::Contract("permutation length differs from node count".into()));
            }
            let mut inverse = vec![usize::MAX; p.len()];
            for (old, &new) in p.iter().enumerate() {
                if new >= p.len() || inverse[new] != usize::MAX {
                    return Err(Error::Contract("not a permutation".into()));
                }
                inverse[new] = old;
            }
            let mut features = set.features.select_rows(&inverse);
            if set.count() == 0 {
                features = set.features.clone();
            }
            let graph_id = inverse.iter().map(|&o| set.graph_id[o]).collect();
            nodes.push(NodeSet { features, graph_id });
        }
        let edges = self
            .schema
            .relations()
            .iter()
            .zip(&self.edges)
            .map(|(def, set)| {
                EdgeSet::new(
                    set.src.iter().map(|&j| perm[def.src.0][j]).collect(),
                    set.dst.iter().map(|&i| perm[def.dst.0][i]).collect(),
                    set.features.clone(),
                )
            })
            .collect();
        Ok(HeteroGraph {
            schema: self.schema.clone(),
            nodes,
            edges,
        })
    }

    /// Copy with replaced feature matrix for one node type.
    pub fn with_node_features(&self, t: NodeType, features: Tensor<f64>) -> HeteroGraph {
        let mut g = self.clone();
        g.nodes[t.0].features = features;
        g
    }

    /// Copy with replaced edge features for one relation.
    pub fn with_edge_features(&self, r: RelationId, features: Tensor<f64>) -> HeteroGraph {
        let mut g = self.clone();
        let set = &self.edges[r.0];
        g.edges[r.0] = EdgeSet::new(set.src.to_vec(), set.dst.to_vec(), features);
        g
    }
}

/// Incremental construction of a [`HeteroGraph`].
#[derive(Debug)]
pub struct GraphBuilder {
    schema: Arc<Schema>,
    node_rows: Vec<Vec<f64>>,
    node_counts: Vec<usize>,
    src: Vec<Vec<usize>>,
    dst: Vec<Vec<usize>>,
    edge_rows: Vec<Vec<f64>>,
}

impl GraphBuilder {
    pub fn new(schema: Arc<Schema>) -> Self {
        let nt = schema.node_types().len();
        let nr = schema.relations().len();
        GraphBuilder {
            schema,
            node_rows: vec![Vec::new(); nt],
            node_counts: vec![0; nt],
            src: vec![Vec::new(); nr],
            dst: vec![Vec::new(); nr],
            edge_rows: vec![Vec::new(); nr],
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Appends a node and returns its dense index within its type.
    pub fn add_node(&mut self, t: NodeType, features: &[f64]) -> Result<usize> {
        let dim = self.schema.node_def(t).feature_dim;
        if features.len() != dim {
            return Err(Error::shape("add_node", (1, dim), (1, features.len())));
        }
        self.node_rows[t.0].extend_from_slice(features);
        self.node_counts[t.0] += 1;
        Ok(self.node_counts[t.0] - 1)
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        self.node_counts[t.0]
    }

    pub fn add_edge(&mut self, r: RelationId, src: usize, dst: usize, features: &[f64]) -> Result<()> {
        let def = self.schema.relation_def(r);
        if features.len() != def.edge_dim {
            return Err(Error::shape("add_edge", (1, def.edge_dim), (1, features.len())));
        }
        self.src[r.0].push(src);
        self.dst[r.0].push(dst);
        self.edge_rows[r.0].extend_from_slice(features);
        Ok(())
    }

    pub fn build(self) -> Result<HeteroGraph> {
        let nodes = self
            .node_rows
            .into_iter()
            .zip(&self.node_counts)
            .zip(self.schema.node_types())
            .map(|((rows, &n), def)| Tensor::from_vec(n, def.feature_dim, rows).map(NodeSet::new))
            .collect::<Result<Vec<_>>>()?;
        let edges = self
            .src
            .into_iter()
            .zip(self.dst)
            .zip(self.edge_rows)
            .zip(self.schema.relations())
            .map(|(((s, d), rows), def)| {
                let n = s.len();
                Ok(EdgeSet::new(s, d, Tensor::from_vec(n, def.edge_dim, rows)?))
            })
            .collect::<Result<Vec<_>>>()?;
        HeteroGraph::new(self.schema, nodes, edges)
    }
}
