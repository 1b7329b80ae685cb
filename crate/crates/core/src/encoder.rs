//! The scene encoder: type-wise input encoders, a GRU over agent
//! trajectories, four cascaded heterogeneous attention layers and an MLP
//! decoder per task.
//!
//! Cascade order and the relations read by each layer:
//!
//! | layer | updates   | relations                                                    |
//! |-------|-----------|--------------------------------------------------------------|
//! | green | crosswalk | crosses, signals                                             |
//! | blue  | lane      | on, overlaps, controls, stops, connection, conflict, precedence |
//! | red   | agent     | under                                                        |
//! | pink  | agent     | interacts                                                    |
//!
//! A layer whose relations are all disabled by the context level is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{het_layer_forward, EdgeGatParams, HetLayerParams};
use crate::graph::{HeteroGraph, NodeType, RelationId, Schema};
use crate::numeric::{gru_sequence, GruParams, Linear, ParamStore, Scalar, Tape, Var};
use crate::scene::{
    scene_schema, Task, AGENT, AGENT_STATIC_DIM, CONFLICT, CONNECTION, CONTROLS, CROSSES, CROSSWALK, INTERACTS,
    LANE, ON, OVERLAPS, PRECEDENCE, SIGNALS, STOPS, STEP_WIDTH, TRAJECTORY_DIM, TRAJECTORY_STEPS, UNDER,
};

/// How much of the ontology the encoder may read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLevel {
    None,
    Agent,
    /// Agents plus the lane graph.
    Lane,
    #[default]
    Full,
}

impl ContextLevel {
    pub const ALL: [ContextLevel; 4] = [ContextLevel::None, ContextLevel::Agent, ContextLevel::Lane, ContextLevel::Full];

    pub fn relations(self) -> BTreeSet<RelationId> {
        let agent = [INTERACTS];
        let lane = [ON, UNDER, CONNECTION, CONFLICT, PRECEDENCE];
        let rest = [CROSSES, SIGNALS, OVERLAPS, CONTROLS, STOPS];
        match self {
            ContextLevel::None => BTreeSet::new(),
            ContextLevel::Agent => agent.into_iter().collect(),
            ContextLevel::Lane => agent.into_iter().chain(lane).collect(),
            ContextLevel::Full => agent.into_iter().chain(lane).chain(rest).collect(),
        }
    }
}

impl fmt::Display for ContextLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextLevel::None => "none",
            ContextLevel::Agent => "agent",
            ContextLevel::Lane => "agent+lane",
            ContextLevel::Full => "full",
        })
    }
}

impl FromStr for ContextLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ContextLevel::None),
            "agent" => Ok(ContextLevel::Agent),
            "lane" | "agent+lane" => Ok(ContextLevel::Lane),
            "full" => Ok(ContextLevel::Full),
            other => Err(Error::Config(format!(
                "unknown context level `{other}` (expected none, agent, lane or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub gru_hidden: usize,
    pub heads: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
    pub use_temporal: bool,
    pub use_residual_concat: bool,
    pub use_edge_features: bool,
    pub context: ContextLevel,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            node_dim: 64,
            edge_dim: 16,
            gru_hidden: 32,
            heads: crate::gnn::DEFAULT_HEADS,
            decoder_hidden: 64,
            dropout: 0.3,
            use_temporal: true,
            use_residual_concat: true,
            use_edge_features: true,
            context: ContextLevel::Full,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("node_dim", self.node_dim),
            ("edge_dim", self.edge_dim),
            ("gru_hidden", self.gru_hidden),
            ("heads", self.heads),
            ("decoder_hidden", self.decoder_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.node_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "node_dim {} is not divisible by {} heads",
                self.node_dim, self.heads
            )));
        }
        if self.use_temporal && self.gru_hidden >= self.node_dim {
            return Err(Error::Config(format!(
                "gru_hidden {} leaves no room for the static agent encoding in node_dim {}",
                self.gru_hidden, self.node_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn static_dim(&self) -> usize {
        if self.use_temporal {
            self.node_dim - self.gru_hidden
        } else {
            self.node_dim
        }
    }

    pub fn decoder_input(&self) -> usize {
        if self.use_residual_concat {
            3 * self.node_dim
        } else {
            self.node_dim
        }
    }
}

const CASCADE: [(&str, NodeType, &[RelationId]); 4] = [
    ("green", CROSSWALK, &[CROSSES, SIGNALS]),
    ("blue", LANE, &[ON, OVERLAPS, CONTROLS, STOPS, CONNECTION, CONFLICT, PRECEDENCE]),
    ("red", AGENT, &[UNDER]),
    ("pink", AGENT, &[INTERACTS]),
];

#[derive(Clone, Debug, PartialEq, Eq)]
struct Decoder {
    hidden: Linear,
    out: Linear,
}

/// Parameters and structure of a scene model with one decoder per task.
#[derive(Clone, Debug)]
pub struct SceneModel<T: Scalar> {
    pub config: EncoderConfig,
    pub tasks: Vec<Task>,
    pub store: ParamStore<T>,
    node_encoders: BTreeMap<NodeType, Linear>,
    agent_static: Linear,
    gru: Option<GruParams>,
    edge_encoders: BTreeMap<RelationId, Linear>,
    layers: Vec<Option<HetLayerParams>>,
    decoders: Vec<Decoder>,
}

/// Node embeddings per type and edge embeddings per relation.
#[derive(Clone, Debug)]
pub struct Embedded {
    pub nodes: Vec<Var>,
    pub edges: Vec<Option<Var>>,
}

impl<T: Scalar> SceneModel<T> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, tasks: &[Task], rng: &mut R) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("a scene model needs at least one task".into()));
        }
        let schema = scene_schema();
        let active = config.context.relations();
        let mut store = ParamStore::new();
        let d = config.node_dim;

        let mut used_types: BTreeSet<NodeType> = active
            .iter()
            .flat_map(|&r| [schema.dom(r), schema.ran(r)])
            .collect();
        used_types.remove(&AGENT);
        let mut node_encoders = BTreeMap::new();
        for t in used_types {
            let def = schema.node_def(t);
            let enc = Linear::new(&mut store, &format!("encode.{}", def.name), def.feature_dim, d, rng)?;
            node_encoders.insert(t, enc);
        }
        let agent_static = Linear::new(&mut store, "encode.agent_static", AGENT_STATIC_DIM, config.static_dim(), rng)?;
        let gru = if config.use_temporal {
            Some(GruParams::new(&mut store, "encode.trajectory", STEP_WIDTH, config.gru_hidden, rng)?)
        } else {
            None
        };
        let mut edge_encoders = BTreeMap::new();
        if config.use_edge_features {
            for &r in &active {
                let def = schema.relation_def(r);
                let enc = Linear::new(&mut store, &format!("encode.{}", def.name), def.edge_dim, config.edge_dim, rng)?;
                edge_encoders.insert(r, enc);
            }
        }
        let edge_dim = config.use_edge_features.then_some(config.edge_dim);
        let mut layers = Vec::with_capacity(CASCADE.len());
        for (name, target, relations) in CASCADE {
            let mut params = BTreeMap::new();
            for &r in relations.iter().filter(|r| active.contains(r)) {
                let prefix = format!("{name}.{}", schema.relation_def(r).name);
                params.insert(r, EdgeGatParams::new(&mut store, &prefix, d, edge_dim, d, config.heads, rng)?);
            }
            layers.push((!params.is_empty()).then_some(HetLayerParams {
                target,
                relations: params,
            }));
        }
        let mut decoders = Vec::with_capacity(tasks.len());
        for task in tasks {
            let name = task.name();
            decoders.push(Decoder {
                hidden: Linear::new(&mut store, &format!("decode.{name}.hidden"), config.decoder_input(), config.decoder_hidden, rng)?,
                out: Linear::new(&mut store, &format!("decode.{name}.out"), config.decoder_hidden, 1, rng)?,
            });
        }
        Ok(SceneModel {
            config,
            tasks: tasks.to_vec(),
            store,
            node_encoders,
            agent_static,
            gru,
            edge_encoders,
            layers,
            decoders,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Same structure with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> SceneModel<U> {
        SceneModel {
            config: self.config.clone(),
            tasks: self.tasks.clone(),
            store: self.store.cast(),
            node_encoders: self.node_encoders.clone(),
            agent_static: self.agent_static.clone(),
            gru: self.gru.clone(),
            edge_encoders: self.edge_encoders.clone(),
            layers: self.layers.clone(),
            decoders: self.decoders.clone(),
        }
    }

    fn check_schema(schema: &Schema) -> Result<()> {
        let expect = scene_schema();
        for t in expect.node_type_ids() {
            let (want, got) = (expect.node_def(t), schema.node_types().get(t.0));
            if got.is_none_or(|g| g.feature_dim != want.feature_dim) {
                return Err(Error::shape(
                    "scene node features",
                    (t.0, got.map_or(0, |g| g.feature_dim)),
                    (t.0, want.feature_dim),
                ));
            }
        }
        for r in expect.relation_ids() {
            let (want, got) = (expect.relation_def(r), schema.relations().get(r.0));
            if got.is_none_or(|g| g.edge_dim != want.edge_dim) {
                return Err(Error::shape(
                    "scene edge features",
                    (r.0, got.map_or(0, |g| g.edge_dim)),
                    (r.0, want.edge_dim),
                ));
            }
        }
        Ok(())
    }

    /// Type-specific linear + ReLU encoders; agents combine a static encoding
    /// with the final GRU state over their trajectory.
    pub fn encode_inputs(&self, tape: &mut Tape<T>, g: &HeteroGraph) -> Result<Embedded> {
        Self::check_schema(g.schema())?;
        let schema = g.schema();
        let mut nodes = Vec::with_capacity(schema.node_types().len());
        for t in schema.node_type_ids() {
            let raw = tape.constant(g.nodes(t).features.cast());
            let v = if t == AGENT {
                self.encode_agents(tape, raw)?
            } else if let Some(enc) = self.node_encoders.get(&t) {
                let h = enc.forward(tape, &self.store, raw)?;
                tape.relu(h)
            } else {
                raw
            };
            nodes.push(v);
        }
        let mut edges = vec![None; schema.relations().len()];
        for (&r, enc) in &self.edge_encoders {
            let raw = tape.constant(g.edges(r).features.cast());
            let h = enc.forward(tape, &self.store, raw)?;
            edges[r.0] = Some(tape.relu(h));
        }
        Ok(Embedded { nodes, edges })
    }

    fn encode_agents(&self, tape: &mut Tape<T>, raw: Var) -> Result<Var> {
        let stat = tape.slice_cols(raw, 0, AGENT_STATIC_DIM)?;
        let stat = self.agent_static.forward(tape, &self.store, stat)?;
        let stat = tape.relu(stat);
        let Some(gru) = &self.gru else {
            return Ok(stat);
        };
        let seq = tape.slice_cols(raw, AGENT_STATIC_DIM, TRAJECTORY_DIM)?;
        let vars = gru.load(tape, &self.store)?;
        let h = gru_sequence(tape, seq, TRAJECTORY_STEPS, &vars)?;
        let h = tape.relu(h);
        tape.concat_cols(&[stat, h])
    }

    /// Runs the cascade and returns the decoder input for every agent.
    pub fn cascade_forward(&self, tape: &mut Tape<T>, emb: &Embedded, g: &HeteroGraph) -> Result<Var> {
        let mut nodes = emb.nodes.clone();
        let input = nodes[AGENT.0];
        let mut after_red = input;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(layer) = layer {
                let updated = het_layer_forward(tape, &self.store, layer, g, &nodes, &emb.edges)?;
                nodes[layer.target.0] = updated;
            }
            if i == 2 {
                after_red = nodes[AGENT.0];
            }
        }
        let last = nodes[AGENT.0];
        if self.config.use_residual_concat {
            tape.concat_cols(&[input, after_red, last])
        } else {
            Ok(last)
        }
    }

    /// Linear → ReLU → dropout → linear → dropout; one logit per row.
    pub fn decode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        head: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let dec = self.decoders.get(head).ok_or_else(|| Error::Range {
            what: "decoder heads".into(),
            index: head,
            len: self.decoders.len(),
        })?;
        let rate = self.config.dropout;
        let h = dec.hidden.forward(tape, &self.store, x)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, rate, training, rng)?;
        let z = dec.out.forward(tape, &self.store, h)?;
        tape.dropout(z, rate, training, rng)
    }

    /// Agent logits `[n_agents × 1]`, one per task head.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        g: &HeteroGraph,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let emb = self.encode_inputs(tape, g)?;
        let x = self.cascade_forward(tape, &emb, g)?;
        (0..self.decoders.len())
            .map(|h| self.decode(tape, x, h, training, rng))
            .collect()
    }

    /// Evaluation-mode probabilities per head and agent.
    pub fn predict(&self, g: &HeteroGraph) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        let logits = self.forward(&mut tape, g, false, &mut unused)?;
        Ok(logits
            .into_iter()
            .map(|z| {
                tape.value(z)
                    .data()
                    .iter()
                    .map(|v| 1.0 / (1.0 + (-v.as_f64()).exp()))
                    .collect()
            })
            .collect())
    }

    /// Layer parameters in cascade order (green, blue, red, pink); `None` for
    /// a skipped layer.
    pub fn layers(&self) -> &[Option<HetLayerParams>] {
        &self.layers
    }

    pub fn node_encoder(&self, t: NodeType) -> Option<&Linear> {
        self.node_encoders.get(&t)
    }

    pub fn edge_encoder(&self, r: RelationId) -> Option<&Linear> {
        self.edge_encoders.get(&r)
    }

    pub fn agent_static_encoder(&self) -> &Linear {
        &self.agent_static
    }

    pub fn trajectory_gru(&self) -> Option<&GruParams> {
        self.gru.as_ref()
    }

    /// Hidden and output layers of decoder `head`.
    pub fn decoder(&self, head: usize) -> Option<(&Linear, &Linear)> {
        self.decoders.get(head).map(|d| (&d.hidden, &d.out))
    }
}
