//! Finite-difference gradient suites run by the command-line tool.
//!
//! Every case builds a scalar from random 64-bit inputs and compares the
//! recorded gradient of every parameter entry with central differences.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use serde::Serialize;

use crate::encoder::{EncoderConfig, SceneModel};
use crate::error::{Error, Result};
use crate::gnn::{edge_gat_forward, het_layer_forward, EdgeGatParams, HetLayerParams, RelationFeatures};
use crate::graph::{GraphBuilder, HeteroGraph, NodeType, NodeTypeDef, RelationDef, RelationId, Schema};
use crate::numeric::gradcheck::{check_params, GradCheckReport};
use crate::numeric::{gru_sequence, GruParams, Linear, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::scene::{assemble_graph, Task};
use crate::synth::{generate_scene, GenConfig, MlpBaseline, MlpConfig};
use crate::train::{AgentClassifier, SceneSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Layer,
    End2End,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Layer, Scope::End2End];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Layer => "layer",
            Scope::End2End => "end2end",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck scope `{s}` (ops, layer, end2end)")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

impl CaseResult {
    fn new(name: &str, r: GradCheckReport) -> Self {
        CaseResult {
            name: name.to_string(),
            checked: r.checked,
            max_rel_error: r.max_rel_error,
            worst: r.worst,
        }
    }
}

/// Runs every case of `scope`.
pub fn gradient_suite(scope: Scope) -> Result<Vec<CaseResult>> {
    match scope {
        Scope::Ops => ops_cases(),
        Scope::Layer => layer_cases(),
        Scope::End2End => end2end_cases(),
    }
}

/// Largest relative error over `cases`.
pub fn worst_error(cases: &[CaseResult]) -> f64 {
    cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

/// Contracts `v` with fixed random weights.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut rng = Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)));
    let m = tape.mul(v, w)?;
    Ok(tape.sum(m))
}

fn inputs_case(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<CaseResult> {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("{name}.x{i}"), t))
        .collect::<Result<_>>()?;
    let report = check_params(&mut store, None, |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        f(tape, &vars)
    })?;
    Ok(CaseResult::new(name, report))
}

fn ops_cases() -> Result<Vec<CaseResult>> {
    let mut rng = Rng::seed_from_u64(101);
    let mut out = Vec::new();
    out.push(inputs_case("matmul", vec![random(3, 4, &mut rng), random(4, 2, &mut rng)], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 1)
    })?);
    out.push(inputs_case("elementwise", vec![random(3, 3, &mut rng), random(3, 3, &mut rng)], |t, v| {
        let a = t.add(v[0], v[1])?;
        let s = t.sub(a, v[1])?;
        let m = t.mul(s, v[1])?;
        let sg = t.sigmoid(m);
        let th = t.tanh(v[0]);
        let sc = t.scale(th, -0.7);
        let z = t.add_all(&[sg, sc, v[1]])?;
        project(t, z, 2)
    })?);
    out.push(inputs_case("activations", vec![random(4, 5, &mut rng)], |t, v| {
        let a = t.relu(v[0]);
        let b = t.leaky_relu(v[0], 0.2)?;
        let s = t.add(a, b)?;
        project(t, s, 3)
    })?);
    out.push(inputs_case(
        "structure",
        vec![random(4, 3, &mut rng), random(4, 2, &mut rng), random(1, 5, &mut rng)],
        |t, v| {
            let c = t.concat_cols(&[v[0], v[1]])?;
            let c = t.add_row(c, v[2])?;
            let s = t.slice_cols(c, 1, 3)?;
            let g = t.gather_rows(s, Arc::from(vec![3, 0, 0, 2, 1]))?;
            let sc = t.scatter_add_rows(g, Arc::from(vec![1, 1, 0, 2, 0]), 3)?;
            let m = t.mean(sc)?;
            let p = project(t, sc, 4)?;
            t.add(m, p)
        },
    )?);
    out.push(inputs_case(
        "attention",
        vec![random(5, 6, &mut rng), random(1, 6, &mut rng), random(5, 6, &mut rng)],
        |t, v| {
            let logits = t.head_dot(v[0], v[1], 2)?;
            let alpha = t.segment_softmax(logits, Arc::from(vec![0, 2, 0, 2, 1]), 3)?;
            let scaled = t.head_scale(v[2], alpha)?;
            project(t, scaled, 5)
        },
    )?);
    out.push(inputs_case("dropout", vec![random(4, 4, &mut rng)], |t, v| {
        let mut mask_rng = Rng::seed_from_u64(6);
        let d = t.dropout(v[0], 0.4, true, &mut mask_rng)?;
        project(t, d, 6)
    })?);
    out.push(inputs_case("losses", vec![random(4, 1, &mut rng), random(3, 4, &mut rng)], |t, v| {
        let b = t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 2.0])?;
        let c = t.cross_entropy(v[1], &[3, 0, 1])?;
        t.add(b, c)
    })?);

    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "linear", 3, 2, &mut rng)?;
    let x = random(4, 3, &mut rng);
    let report = check_params(&mut store, None, |tape, store| {
        let xv = tape.constant(x.clone());
        let y = lin.forward(tape, store, xv)?;
        project(tape, y, 7)
    })?;
    out.push(CaseResult::new("linear", report));

    let mut store = ParamStore::<f64>::new();
    let gru = GruParams::new(&mut store, "gru", 2, 3, &mut rng)?;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).shape();
        *store.value_mut(id) = random(r, c, &mut rng);
    }
    let seq = random(2, 8, &mut rng);
    let report = check_params(&mut store, None, |tape, store| {
        let vars = gru.load(tape, store)?;
        let s = tape.constant(seq.clone());
        let h = gru_sequence(tape, s, 4, &vars)?;
        project(tape, h, 8)
    })?;
    out.push(CaseResult::new("gru", report));
    Ok(out)
}

/// Two node types; relations 0 and 1 point into type 1, relation 1 has no
/// edge features in the layer.
fn layer_graph(rng: &mut Rng) -> Result<HeteroGraph> {
    let t = |n: &str| NodeTypeDef {
        name: n.into(),
        feature_dim: 3,
    };
    let schema = Schema::new(
        vec![t("a"), t("b")],
        vec![
            RelationDef {
                name: "ab".into(),
                src: NodeType(0),
                dst: NodeType(1),
                edge_dim: 2,
            },
            RelationDef {
                name: "bb".into(),
                src: NodeType(1),
                dst: NodeType(1),
                edge_dim: 2,
            },
        ],
    )?;
    let mut b = GraphBuilder::new(Arc::new(schema));
    for _ in 0..3 {
        b.add_node(NodeType(0), random(1, 3, rng).data())?;
    }
    for _ in 0..3 {
        b.add_node(NodeType(1), random(1, 3, rng).data())?;
    }
    for (r, s, d) in [(0, 0, 0), (0, 1, 0), (0, 2, 1), (0, 2, 2), (1, 0, 1), (1, 2, 1), (1, 1, 0)] {
        b.add_edge(RelationId(r), s, d, random(1, 2, rng).data())?;
    }
    b.build()
}

fn layer_cases() -> Result<Vec<CaseResult>> {
    let mut rng = Rng::seed_from_u64(202);
    let g = layer_graph(&mut rng)?;
    let mut store = ParamStore::<f64>::new();
    let ab = EdgeGatParams::new(&mut store, "ab", 3, Some(2), 4, 2, &mut rng)?;
    let bb = EdgeGatParams::new(&mut store, "bb", 3, None, 4, 2, &mut rng)?;
    let x: Vec<ParamId> = (0..2)
        .map(|t| store.insert(format!("x{t}"), g.nodes(NodeType(t)).features.clone()))
        .collect::<Result<_>>()?;
    let e: Vec<ParamId> = (0..2)
        .map(|r| store.insert(format!("e{r}"), g.edges(RelationId(r)).features.clone()))
        .collect::<Result<_>>()?;
    let load = |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
        let nodes: Vec<Var> = x.iter().map(|&id| tape.param(store, id)).collect();
        let edges: Vec<Option<Var>> = e.iter().map(|&id| Some(tape.param(store, id))).collect();
        (nodes, edges)
    };

    let mut out = Vec::new();
    let mut single = store.clone();
    let report = check_params(&mut single, None, |tape, store| {
        let (n, e) = load(tape, store);
        let f = RelationFeatures {
            src: n[0],
            dst: n[1],
            edge: e[0],
        };
        let y = edge_gat_forward(tape, store, &ab, &g, RelationId(0), &f)?;
        project(tape, y, 9)
    })?;
    out.push(CaseResult::new("edge_gat", report));

    let layer = HetLayerParams {
        target: NodeType(1),
        relations: [(RelationId(0), ab.clone()), (RelationId(1), bb.clone())].into_iter().collect(),
    };
    let report = check_params(&mut store, None, |tape, store| {
        let (n, e) = load(tape, store);
        let y = het_layer_forward(tape, store, &layer, &g, &n, &e)?;
        project(tape, y, 10)
    })?;
    out.push(CaseResult::new("het_edge_gat", report));
    Ok(out)
}

/// Moves every parameter off its initial value. Zero biases on zero-valued
/// categorical inputs otherwise put ReLUs exactly at their kink, where finite
/// differences are one-sided.
fn jitter(store: &mut ParamStore<f64>, rng: &mut Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn end2end_cases() -> Result<Vec<CaseResult>> {
    let gen = GenConfig {
        agents: [4, 5],
        ..GenConfig::default()
    };
    let scene = generate_scene(&gen, 0)?;
    let g = assemble_graph(&scene)?;
    let sample = SceneSample::new("gradcheck", &scene)?;
    let targets: Vec<(Vec<f64>, Vec<f64>)> = Task::ALL
        .iter()
        .map(|&t| {
            let (y, m) = sample.targets(t);
            (y.to_vec(), m.iter().map(|&b| b as u8 as f64).collect())
        })
        .collect();
    let loss = |tape: &mut Tape<f64>, z: &[Var]| -> Result<Var> {
        let parts = z
            .iter()
            .zip(&targets)
            .map(|(&z, (y, w))| tape.bce_with_logits(z, y, w))
            .collect::<Result<Vec<_>>>()?;
        tape.add_all(&parts)
    };

    let config = EncoderConfig {
        node_dim: 8,
        edge_dim: 4,
        gru_hidden: 4,
        decoder_hidden: 8,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let mut rng = Rng::seed_from_u64(303);
    let mut model = SceneModel::<f64>::new(config, &Task::ALL, &mut rng)?;
    jitter(&mut model.store, &mut rng);
    let structure = model.clone();
    let report = check_params(&mut model.store, None, |tape, store| {
        let mut probe = structure.clone();
        probe.store = store.clone();
        let z = probe.forward(tape, &g, false, &mut Rng::seed_from_u64(0))?;
        loss(tape, &z)
    })?;
    let mut out = vec![CaseResult::new("scene_model", report)];

    let mut mlp = MlpBaseline::<f64>::new(MlpConfig { hidden: 6 }, &Task::ALL, &mut rng)?;
    jitter(&mut mlp.store, &mut rng);
    let structure = mlp.clone();
    let report = check_params(&mut mlp.store, None, |tape, store| {
        let mut probe = structure.clone();
        probe.store = store.clone();
        let z = probe.logits(tape, &g, false, &mut Rng::seed_from_u64(0))?;
        loss(tape, &z)
    })?;
    out.push(CaseResult::new("mlp_baseline", report));
    Ok(out)
}
