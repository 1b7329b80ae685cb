//! Cascaded four-layer model over learnable node vectors.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{OTHER, TARGET};
use crate::error::{Error, Result};
use crate::gnn::{het_layer_forward, EdgeGatParams, HetLayerParams, DEFAULT_HEADS};
use crate::graph::{HeteroGraph, NodeType, RelationId, Schema};
use crate::numeric::{glorot, Linear, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgModelConfig {
    /// Width of the per-node vectors and of every layer.
    pub dim: usize,
    pub heads: usize,
    pub use_edge_features: bool,
}

impl Default for KgModelConfig {
    fn default() -> Self {
        KgModelConfig {
            dim: 32,
            heads: DEFAULT_HEADS,
            use_edge_features: true,
        }
    }
}

impl KgModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "kg width {} must be positive and divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Which relations each of the four layers reads: layers 1 and 2 update
/// `other` from every relation into it, layer 3 updates `target` from
/// `other`, layer 4 updates `target` from `target`.
pub fn kg_layer_relations(schema: &Schema) -> [(NodeType, Vec<RelationId>); 4] {
    let into_other: Vec<RelationId> = schema.relation_ids().filter(|&r| schema.ran(r) == OTHER).collect();
    let from = |src: NodeType| -> Vec<RelationId> {
        schema
            .relation_ids()
            .filter(|&r| schema.ran(r) == TARGET && schema.dom(r) == src)
            .collect()
    };
    [
        (OTHER, into_other.clone()),
        (OTHER, into_other),
        (TARGET, from(OTHER)),
        (TARGET, from(TARGET)),
    ]
}

#[derive(Clone, Debug)]
pub struct KgModel<T: Scalar> {
    pub config: KgModelConfig,
    pub store: ParamStore<T>,
    /// Node vectors of the target and other types.
    pub embeddings: [ParamId; 2],
    layers: Vec<Option<HetLayerParams>>,
    head: Linear,
    num_nodes: [usize; 2],
}

impl<T: Scalar> KgModel<T> {
    pub fn new<R: Rng + ?Sized>(config: KgModelConfig, g: &HeteroGraph, classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if classes == 0 {
            return Err(Error::Config("a kg task needs at least one class".into()));
        }
        let schema = g.schema();
        if schema.node_types().len() != 2 {
            return Err(Error::Schema("a kg graph has exactly the target and other node types".into()));
        }
        let d = config.dim;
        let mut store = ParamStore::new();
        let num_nodes = [g.node_count(TARGET), g.node_count(OTHER)];
        let embeddings = [
            store.insert("kg.embed.target", glorot(num_nodes[0], d, 1, d, rng))?,
            store.insert("kg.embed.other", glorot(num_nodes[1], d, 1, d, rng))?,
        ];
        let mut layers = Vec::with_capacity(4);
        for (i, (target, rels)) in kg_layer_relations(schema).into_iter().enumerate() {
            if rels.is_empty() {
                layers.push(None);
                continue;
            }
            let mut relations = BTreeMap::new();
            for r in rels {
                let def = schema.relation_def(r);
                let edge_dim = config.use_edge_features.then_some(def.edge_dim);
                let prefix = format!("kg.layer{}.{}", i + 1, def.name);
                relations.insert(r, EdgeGatParams::new(&mut store, &prefix, d, edge_dim, d, config.heads, rng)?);
            }
            layers.push(Some(HetLayerParams { target, relations }));
        }
        let head = Linear::new(&mut store, "kg.head", d, classes, rng)?;
        Ok(KgModel {
            config,
            store,
            embeddings,
            layers,
            head,
            num_nodes,
        })
    }

    pub fn layers(&self) -> &[Option<HetLayerParams>] {
        &self.layers
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Class logits `[n_target × C]`.
    pub fn forward(&self, tape: &mut Tape<T>, g: &HeteroGraph) -> Result<Var> {
        let counts = [g.node_count(TARGET), g.node_count(OTHER)];
        if counts != self.num_nodes {
            return Err(Error::Config(format!(
                "model was built for {:?} nodes but the graph has {counts:?}",
                self.num_nodes
            )));
        }
        let mut nodes: Vec<Var> = self.embeddings.iter().map(|&id| tape.param(&self.store, id)).collect();
        let edges: Vec<Option<Var>> = g
            .schema()
            .relation_ids()
            .map(|r| {
                self.config
                    .use_edge_features
                    .then(|| tape.constant(g.edges(r).features.cast()))
            })
            .collect();
        for layer in self.layers.iter().flatten() {
            nodes[layer.target.0] = het_layer_forward(tape, &self.store, layer, g, &nodes, &edges)?;
        }
        self.head.forward(tape, &self.store, nodes[TARGET.0])
    }
}
