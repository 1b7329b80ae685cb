//! Acceptance criteria, one `PASS` / `FAIL` / `BLOCKED` line each.
//!
//! Knowledge-graph criteria need the benchmark datasets on disk:
//! `HETSCENE_KG_DATA` must name a directory with `aifb/`, `bgs/`, `mutag/`
//! and optionally `am/`, each holding `*.nt`, `train.tsv` and `test.tsv`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use hetscene::checks::{gradient_suite, worst_error, Scope};
use hetscene::encoder::{ContextLevel, EncoderConfig, SceneModel};
use hetscene::gnn::{edge_gat_attention, edge_gat_forward, het_layer_forward, EdgeGatParams, RelationFeatures};
use hetscene::graph::{HeteroGraph, NodeType, RelationId};
use hetscene::kg::{KgConfig, KgDataset};
use hetscene::numeric::{ParamStore, Rng, Tape, Tensor, Var};
use hetscene::scene::Task;
use hetscene::synth::{write_dataset, Dataset, GenConfig};
use hetscene::train::{predict, AdamConfig, MetricReport, TrainConfig};
use hetscene_cli::args::{ModelKind, TaskChoice};
use hetscene_cli::{run_kg, run_scene, SceneRunConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_CASES: usize = 1200;
const ATTN_TOL: f64 = 1e-6;
const EQUIV_TOL: f64 = 1e-5;
const PROPERTY_CASES: usize = 300;
const SCENE_SEEDS: usize = 5;
const SCENE_EPOCHS: usize = 10;
const SCENE_LR: f64 = 1e-3;
const SCENE_BATCH: usize = 32;
const BASELINE_MARGIN: f64 = 0.05;
const CONTEXT_GAP: f64 = 0.05;
const EDGE_ABLATION_DROP: f64 = 0.02;
const SCENE_BUDGET: Duration = Duration::from_secs(30 * 60);
const PARAM_RANGE: (usize, usize) = (80_000, 160_000);
const KG_SEEDS: usize = 10;
const AIFB_BUDGET: Duration = Duration::from_secs(5 * 60);

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Line {
    id: &'static str,
    status: Status,
    detail: String,
}

impl Line {
    fn check(id: &'static str, ok: bool, detail: String) -> Self {
        Line {
            id,
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    fn print(&self) {
        let s = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
        };
        println!("[{s:>7}] {:<4} {}", self.id, self.detail);
    }
}

fn kg_criteria() -> Vec<Line> {
    let Some(root) = std::env::var_os("HETSCENE_KG_DATA") else {
        let why = "HETSCENE_KG_DATA is not set; the benchmark graphs are not available offline".to_string();
        return vec![
            Line { id: "1", status: Status::Blocked, detail: format!("AIFB accuracy: {why}") },
            Line { id: "2", status: Status::Blocked, detail: format!("BGS / MUTAG / AM accuracy: {why}") },
        ];
    };
    let root = Path::new(&root);
    let seeds: Vec<u64> = (0..KG_SEEDS as u64).collect();
    let run = |name: &str| -> Result<(f64, f64, Duration), String> {
        let start = Instant::now();
        let ds = KgDataset::load(root.join(name)).map_err(|e| e.to_string())?;
        let r = run_kg(&ds, &KgConfig::default(), &seeds).map_err(|e| e.to_string())?;
        Ok((r.acc_mean, r.acc_std, start.elapsed()))
    };
    let mut lines = Vec::new();
    lines.push(match run("aifb") {
        Ok((m, s, t)) => Line::check(
            "1",
            m >= 0.92 && t < AIFB_BUDGET,
            format!("AIFB accuracy {:.2} ± {:.2} % (need ≥ 92), {:.0} s (need < 300)", 100.0 * m, 100.0 * s, t.as_secs_f64()),
        ),
        Err(e) => Line::check("1", false, format!("AIFB: {e}")),
    });
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, need, required) in [("bgs", 0.87, true), ("mutag", 0.70, true), ("am", 0.86, false)] {
        match run(name) {
            Ok((m, s, _)) => {
                ok &= m >= need || !required;
                parts.push(format!("{name} {:.2} ± {:.2} (need ≥ {:.0})", 100.0 * m, 100.0 * s, 100.0 * need));
            }
            Err(e) if !required => parts.push(format!("{name} skipped ({e})")),
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    lines.push(Line::check("2", ok, parts.join("; ")));
    lines
}

fn gradient_criterion() -> Line {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for scope in Scope::ALL {
        match gradient_suite(scope) {
            Ok(c) => {
                worst = worst.max(worst_error(&c));
                cases += c.len();
            }
            Err(e) => return Line::check("3", false, format!("gradient suite error: {e}")),
        }
    }
    let t = start.elapsed();
    Line::check(
        "3",
        worst < GRAD_TOL && t < GRAD_BUDGET,
        format!("gradient suite: {cases} cases, max relative error {worst:.2e} (< {GRAD_TOL:.0e}), {:.1} s", t.as_secs_f64()),
    )
}

fn load(tape: &mut Tape<f64>, g: &HeteroGraph) -> (Vec<Var>, Vec<Option<Var>>) {
    let nodes = g.schema().node_type_ids().map(|t| tape.constant(g.nodes(t).features.clone())).collect();
    let edges = g
        .schema()
        .relation_ids()
        .map(|r| Some(tape.constant(g.edges(r).features.clone())))
        .collect();
    (nodes, edges)
}

fn feats(nodes: &[Var], edges: &[Option<Var>], g: &HeteroGraph, r: RelationId, with_edges: bool) -> RelationFeatures {
    let s = g.schema();
    RelationFeatures {
        src: nodes[s.dom(r).0],
        dst: nodes[s.ran(r).0],
        edge: if with_edges { edges[r.0] } else { None },
    }
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn layer_output(store: &ParamStore<f64>, layer: &hetscene::gnn::HetLayerParams, g: &HeteroGraph) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (n, e) = load(&mut tape, g);
    let y = het_layer_forward(&mut tape, store, layer, g, &n, &e).unwrap();
    tape.value(y).clone()
}

fn oracle_criterion() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let schema = toy_schema(3, 2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for case in 0..ORACLE_CASES {
        let g = random_graph(&schema, 6, 6, &mut rng);
        let heads = [1, 2, 4][case % 3];
        let mut store = ParamStore::<f64>::new();
        let (a, b) = (to_mat(&g.nodes(NodeType(0)).features), to_mat(&g.nodes(NodeType(1)).features));

        // single relation, with and without edge features
        let r = RelationId(0);
        for with_edges in [true, false] {
            let edge_dim = with_edges.then_some(2);
            let p = EdgeGatParams::new(&mut store, &format!("single{with_edges}"), 3, edge_dim, 4, heads, &mut rng).unwrap();
            let ef = to_mat(&g.edges(r).features);
            let oracle = oracle_edge_gat(&RawGat::from_store(&store, &p), &a, &b, with_edges.then_some(&ef), &edge_list(&g, r));
            let mut tape = Tape::new();
            let (n, e) = load(&mut tape, &g);
            let y = edge_gat_forward(&mut tape, &store, &p, &g, r, &feats(&n, &e, &g, r, with_edges)).unwrap();
            worst = worst.max(max_diff(&to_mat(tape.value(y)), &oracle));
            cases += 1;
        }

        let layer = layer_into_b(&mut store, 3, 2, 4, heads, &mut rng);
        let parts: Vec<Mat> = [0usize, 1]
            .iter()
            .map(|&r| {
                let rid = RelationId(r);
                let raw = RawGat::from_store(&store, &layer.relations[&rid]);
                let src = if r == 0 { &a } else { &b };
                oracle_edge_gat(&raw, src, &b, Some(&to_mat(&g.edges(rid).features)), &edge_list(&g, rid))
            })
            .collect();
        worst = worst.max(max_diff(&to_mat(&layer_output(&store, &layer, &g)), &relu_sum(&parts)));
        cases += 1;
    }
    Line::check(
        "4",
        worst < ORACLE_TOL && cases >= 1000,
        format!("operator oracles: {cases} random cases on ≤ 6-node graphs, max abs difference {worst:.2e} (< {ORACLE_TOL:.0e})"),
    )
}

/// Scene-model predictions for scenes batched together and one at a time.
fn scene_batching_gap() -> f64 {
    let cfg = GenConfig { scenes: 12, seed: 8, ..Default::default() };
    let (ds, _) = Dataset::generate(&cfg).unwrap();
    let samples: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).cloned().collect();
    let mut rng = Rng::seed_from_u64(3);
    let model = SceneModel::<f64>::new(EncoderConfig::default(), &Task::ALL, &mut rng).unwrap();
    let together = predict(&model, &samples).unwrap();
    let mut worst = 0.0f64;
    for (k, s) in samples.iter().enumerate() {
        let alone = predict(&model, std::slice::from_ref(s)).unwrap();
        for h in 0..Task::ALL.len() {
            for (x, y) in alone[h][0].iter().zip(&together[h][k]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

fn property_criterion() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let schema = toy_schema(3, 2);
    let (mut attn, mut perm_gap, mut union_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..PROPERTY_CASES {
        let g = random_graph(&schema, 6, 6, &mut rng);
        let mut store = ParamStore::<f64>::new();
        let layer = layer_into_b(&mut store, 3, 2, 4, 2, &mut rng);

        for (&r, p) in &layer.relations {
            let mut tape = Tape::new();
            let (n, e) = load(&mut tape, &g);
            let alpha = edge_gat_attention(&mut tape, &store, p, &g, r, &feats(&n, &e, &g, r, true)).unwrap();
            let alpha = tape.value(alpha);
            for i in 0..g.node_count(g.schema().ran(r)) {
                let incoming = g.in_neighbors(r, i).unwrap();
                if incoming.is_empty() {
                    continue;
                }
                for k in 0..p.heads {
                    let s: f64 = incoming.iter().map(|&(_, e)| alpha.get(e, k)).sum();
                    attn = attn.max((s - 1.0).abs());
                }
            }
        }

        let perm: Vec<Vec<usize>> = g
            .schema()
            .node_type_ids()
            .map(|t| {
                let mut p: Vec<usize> = (0..g.node_count(t)).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let before = layer_output(&store, &layer, &g);
        let after = layer_output(&store, &layer, &g.permute_nodes(&perm).unwrap());
        for (old, &new) in perm[1].iter().enumerate() {
            for (x, y) in before.row(old).iter().zip(after.row(new)) {
                perm_gap = perm_gap.max((x - y).abs());
            }
        }

        let other = random_graph(&schema, 6, 6, &mut rng);
        let u = HeteroGraph::disjoint_union(&[&g, &other]).unwrap();
        let yu = layer_output(&store, &layer, &u);
        let y2 = layer_output(&store, &layer, &other);
        let n1 = g.node_count(NodeType(1));
        for i in 0..yu.rows() {
            let expect = if i < n1 { before.row(i) } else { y2.row(i - n1) };
            for (x, y) in yu.row(i).iter().zip(expect) {
                union_gap = union_gap.max((x - y).abs());
            }
        }
    }
    let scene_gap = scene_batching_gap();
    union_gap = union_gap.max(scene_gap);
    Line::check(
        "5",
        attn < ATTN_TOL && perm_gap < EQUIV_TOL && union_gap < EQUIV_TOL,
        format!(
            "structure over {PROPERTY_CASES} graphs: attention sum error {attn:.1e}, permutation gap {perm_gap:.1e}, \
             batching gap {union_gap:.1e} (scene model {scene_gap:.1e})"
        ),
    )
}

fn scene_config(model: ModelKind, task: TaskChoice) -> SceneRunConfig {
    SceneRunConfig {
        model,
        task,
        seed: 0,
        seeds: SCENE_SEEDS,
        train: TrainConfig {
            epochs: SCENE_EPOCHS,
            batch_size: SCENE_BATCH,
            optimizer: AdamConfig { lr: SCENE_LR, ..Default::default() },
        },
        ..Default::default()
    }
}

fn f1(cfg: &SceneRunConfig, data: &Dataset) -> (MetricReport, Duration) {
    let start = Instant::now();
    let run = run_scene(cfg, data).unwrap_or_else(|e| panic!("{cfg:?}: {e}"));
    let t = start.elapsed();
    let r = run.reports.into_iter().next().unwrap();
    println!(
        "          {:<34} F1 {:.4} ± {:.4}  acc {:.4}  ({:.0} s)",
        describe(cfg),
        r.f1_mean,
        r.f1_std,
        r.acc_mean,
        t.as_secs_f64()
    );
    (r, t)
}

fn describe(cfg: &SceneRunConfig) -> String {
    let task = format!("{:?}", cfg.task).to_lowercase();
    match cfg.model {
        ModelKind::Scene => {
            let e = &cfg.encoder;
            let mut s = format!("scene {task} context={:?}", e.context).to_lowercase();
            if !e.use_edge_features {
                s.push_str(" no-edge");
            }
            s
        }
        ModelKind::Mlp => format!("mlp {task}"),
        ModelKind::Velocity => format!("velocity {task}"),
    }
}

fn scene_criteria(data: &Dataset) -> Vec<Line> {
    let full_parked = scene_config(ModelKind::Scene, TaskChoice::Parked);
    let (full, t1) = f1(&full_parked, data);
    let (full_ghost, t2) = f1(&scene_config(ModelKind::Scene, TaskChoice::Ghost), data);
    let (mlp, t3) = f1(&scene_config(ModelKind::Mlp, TaskChoice::Parked), data);
    let (mlp_ghost, t4) = f1(&scene_config(ModelKind::Mlp, TaskChoice::Ghost), data);
    let (vel, t5) = f1(&scene_config(ModelKind::Velocity, TaskChoice::Parked), data);
    let t = t1 + t2 + t3 + t4 + t5;
    let c6 = Line::check(
        "6",
        full.f1_mean >= vel.f1_mean + BASELINE_MARGIN
            && full.f1_mean >= mlp.f1_mean + BASELINE_MARGIN
            && full_ghost.f1_mean >= mlp_ghost.f1_mean
            && t < SCENE_BUDGET,
        format!(
            "scene tasks: parked F1 {:.4} vs velocity {:.4} and MLP {:.4} (need +{BASELINE_MARGIN}); \
             ghost F1 {:.4} vs MLP {:.4}; {:.1} min",
            full.f1_mean,
            vel.f1_mean,
            mlp.f1_mean,
            full_ghost.f1_mean,
            mlp_ghost.f1_mean,
            t.as_secs_f64() / 60.0
        ),
    );

    let mut levels = Vec::new();
    for c in [ContextLevel::None, ContextLevel::Agent, ContextLevel::Lane] {
        let mut cfg = full_parked.clone();
        cfg.encoder.context = c;
        levels.push(f1(&cfg, data).0.f1_mean);
    }
    levels.push(full.f1_mean);
    let monotone = levels.windows(2).all(|w| w[1] >= w[0]);
    let gap = levels[3] - levels[0];
    let c7 = Line::check(
        "7",
        monotone && gap >= CONTEXT_GAP,
        format!(
            "context ablation: parked F1 none {:.4}, agent {:.4}, lane {:.4}, full {:.4}; gap {gap:.4} (need ≥ {CONTEXT_GAP})",
            levels[0], levels[1], levels[2], levels[3]
        ),
    );

    let mut cfg = full_parked.clone();
    cfg.encoder.use_edge_features = false;
    let no_edge = f1(&cfg, data).0.f1_mean;
    let drop = full.f1_mean - no_edge;
    let c8 = Line::check(
        "8",
        drop >= EDGE_ABLATION_DROP,
        format!("edge-feature ablation: parked F1 {no_edge:.4} vs full {:.4}, drop {drop:.4} (need ≥ {EDGE_ABLATION_DROP})", full.f1_mean),
    );
    vec![c6, c7, c8]
}

fn parameter_criterion() -> Line {
    let count = |tasks: &[Task]| {
        SceneModel::<f32>::new(EncoderConfig::default(), tasks, &mut Rng::seed_from_u64(0))
            .unwrap()
            .num_params()
    };
    let (one, both) = (count(&[Task::Parked]), count(&Task::ALL));
    let inside = |n: usize| (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&n);
    Line::check(
        "9",
        inside(one) && inside(both),
        format!("parameter budget: {one} (one head), {both} (two heads), need [{}, {}]", PARAM_RANGE.0, PARAM_RANGE.1),
    )
}

fn determinism_criterion(dir: &Path) -> Line {
    let data = dir.join("det_data");
    let cfg = GenConfig { scenes: 200, seed: 17, ..Default::default() };
    write_dataset(&cfg, &data).unwrap();
    let run_cfg = dir.join("det.json");
    fs::write(&run_cfg, r#"{"task": "both", "seeds": 2, "train": {"epochs": 2, "optimizer": {"lr": 0.001}}}"#).unwrap();
    let mut outputs = Vec::new();
    for (k, (model, threads)) in [("scene", "1"), ("scene", "2"), ("mlp", "1"), ("mlp", "2")].iter().enumerate() {
        let out = dir.join(format!("det_{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_hetscene"))
            .args(["scene-train", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .arg("--config")
            .arg(&run_cfg)
            .args(["--model", model])
            .env("HETSCENE_THREADS", threads)
            .output()
            .unwrap();
        if !status.status.success() {
            return Line::check("10", false, format!("scene-train failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(fs::read(out.join("metrics.json")).unwrap());
    }
    let same = outputs[0] == outputs[1] && outputs[2] == outputs[3];
    Line::check(
        "10",
        same,
        "determinism: scene-train metrics JSON bitwise identical across repeats with 1 and 2 worker threads (scene and MLP)"
            .to_string(),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut lines = kg_criteria();
    lines.iter().for_each(Line::print);

    let rest: Vec<Box<dyn Fn() -> Vec<Line>>> = vec![
        Box::new(|| vec![gradient_criterion()]),
        Box::new(|| vec![oracle_criterion()]),
        Box::new(|| vec![property_criterion()]),
        Box::new(|| {
            let data_dir = dir.path().join("scenes");
            write_dataset(&GenConfig::default(), &data_dir).unwrap();
            let data = Dataset::load(&data_dir).unwrap();
            scene_criteria(&data)
        }),
        Box::new(|| vec![parameter_criterion()]),
        Box::new(|| vec![determinism_criterion(dir.path())]),
    ];
    for f in rest {
        for l in f() {
            l.print();
            lines.push(l);
        }
    }
    let failed = lines.iter().filter(|l| matches!(l.status, Status::Fail)).count();
    let blocked = lines.iter().filter(|l| matches!(l.status, Status::Blocked)).count();
    println!(
        "acceptance: {} passed, {failed} failed, {blocked} blocked ({:.1} min)",
        lines.len() - failed - blocked,
        start.elapsed().as_secs_f64() / 60.0
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
