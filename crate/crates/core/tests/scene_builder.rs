use std::f64::consts::PI;

use hetscene::scene::*;
use hetscene::Error;
use proptest::prelude::*;

mod common;
use common::scenes::*;

/// Pairwise differences computed with an explicit rotation matrix.
fn interacts_oracle(agents: &[AgentRecord]) -> Vec<(usize, usize, [f64; 5])> {
    let mut out = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        for (j, b) in agents.iter().enumerate() {
            if i == j {
                continue;
            }
            let (c, s) = (a.yaw.cos(), a.yaw.sin());
            let r = |x: f64, y: f64| [c * x + s * y, -s * x + c * y];
            let p = r(b.position[0] - a.position[0], b.position[1] - a.position[1]);
            let v = r(b.velocity[0] - a.velocity[0], b.velocity[1] - a.velocity[1]);
            let mut h = b.yaw - a.yaw;
            while h > PI {
                h -= 2.0 * PI;
            }
            while h <= -PI {
                h += 2.0 * PI;
            }
            out.push((j, i, [p[0], p[1], v[0], v[1], h]));
        }
    }
    out
}

/// Nearest point on a densely resampled centerline: (s, signed d).
fn dense_projection(points: &[[f64; 2]], p: [f64; 2]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut station = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len / 1e-4).ceil() as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if dist < best.0 {
                let side = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                best = (dist, station + t * len, dist * side.signum());
            }
        }
        station += len;
    }
    (best.1, best.2)
}

#[test]
fn interacts_counts() {
    assert_eq!(derive_interacts(&[agent("a", [0.0, 0.0], [0.0, 0.0], 0.0)]).len(), 0);
    let three: Vec<_> = (0..3).map(|i| agent(&i.to_string(), [i as f64, 0.0], [0.0; 2], 0.0)).collect();
    assert_eq!(derive_interacts(&three).len(), 6);
    assert_eq!(derive_interacts(&[]).len(), 0);
}

#[test]
fn interacts_hand_geometry() {
    let agents = [
        agent("a", [0.0, 0.0], [0.0, 0.0], 0.0),
        agent("b", [3.0, 4.0], [0.0, 0.0], PI / 2.0),
    ];
    let e = derive_interacts(&agents);
    let into_first = (0..e.len()).find(|&k| e.dst[k] == 0).unwrap();
    assert_eq!(e.src[into_first], 1);
    let row = e.features.row(into_first);
    assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 4.0).abs() < 1e-12);
    assert!((row[4] - PI / 2.0).abs() < 1e-12);
}

#[test]
fn agent_on_centerline_is_centered() {
    let l = lane("l", vec![[0.0, 0.0], [10.0, 0.0]], 3.5);
    let e = derive_agent_map_relations(&[agent("a", [4.0, 0.0], [5.0, 0.0], 0.0)], &[l], &[]).unwrap();
    assert_eq!(e.under.len(), 1);
    let row = e.under.features.row(0);
    assert_eq!(row[2], 0.0);
    assert_eq!((row[8], row[9]), (1.75, 1.75));
    assert_eq!(row[0], 1.0);
    // following
    assert_eq!(&row[10..], &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn distant_agent_has_no_map_edges() {
    let l = lane("l", vec![[0.0, 0.0], [10.0, 0.0]], 3.5);
    let cw = CrosswalkRecord {
        id: "c".into(),
        polygon: vec![[2.0, -2.0], [4.0, -2.0], [4.0, 2.0], [2.0, 2.0]],
        signaled: false,
    };
    let e = derive_agent_map_relations(&[agent("a", [5.0, 100.0], [0.0; 2], 0.0)], &[l], &[cw]).unwrap();
    assert!(e.on.is_empty() && e.under.is_empty() && e.crosses.is_empty());
}

#[test]
fn frenet_closed_form_example() {
    let l = lane("l", vec![[0.0, 0.0], [10.0, 0.0]], 4.0);
    let e = derive_agent_map_relations(&[agent("a", [5.0, 1.0], [0.0; 2], 0.0)], std::slice::from_ref(&l), &[]).unwrap();
    let row = e.under.features.row(0);
    assert_eq!((row[1], row[2]), (5.0, 1.0));
    assert_eq!((row[8], row[9]), (1.0, 3.0));
    let (s, d) = dense_projection(&l.centerline, [5.0, 1.0]);
    assert!((s - 5.0).abs() < 1e-3 && (d - 1.0).abs() < 1e-3);
    // stationary
    assert_eq!(&row[10..], &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn behavior_thresholds() {
    assert_eq!(Behavior::classify(0.49, 0.0), Behavior::Stationary);
    assert_eq!(Behavior::classify(5.0, 0.7), Behavior::Following);
    assert_eq!(Behavior::classify(5.0, PI / 2.0), Behavior::Crossing);
    assert_eq!(Behavior::classify(5.0, -PI / 2.0), Behavior::Crossing);
    assert_eq!(Behavior::classify(5.0, PI), Behavior::Oncoming);
    assert_eq!(Behavior::classify(5.0, 3.0 * PI / 4.0 + 0.01), Behavior::Oncoming);
}

#[test]
fn degenerate_centerline_is_a_geometry_error() {
    let l = lane("l", vec![[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]], 3.0);
    let err = derive_agent_map_relations(&[], std::slice::from_ref(&l), &[]).unwrap_err();
    assert!(matches!(err, Error::Geometry(ref m) if m.contains("`l`")), "{err}");
    assert!(matches!(assemble_graph(&scene(vec![], vec![l])), Err(Error::Geometry(_))));
}

#[test]
fn empty_scene() {
    let g = assemble_graph(&SceneDescription::default()).unwrap();
    assert!(g.validate().is_empty());
    assert_eq!(g.total_nodes(), 0);
    assert_eq!(g.total_edges(), 0);
    assert_eq!(g.schema().node_types().len(), 5);
}

#[test]
fn two_agents_one_lane() {
    let s = scene(
        vec![agent("a", [2.0, 0.5], [3.0, 0.0], 0.0), agent("b", [8.0, -0.5], [3.0, 0.0], 0.0)],
        vec![lane("l", vec![[0.0, 0.0], [10.0, 0.0]], 3.5)],
    );
    let g = assemble_graph(&s).unwrap();
    assert_eq!(g.edge_count(INTERACTS), 2);
    assert_eq!(g.edge_count(ON), 2);
    assert_eq!(g.edge_count(UNDER), 2);
    assert_eq!(g.nodes(AGENT).features.cols(), AGENT_FEATURE_DIM);
}

#[test]
fn ontology_domains_and_ranges() {
    let schema = scene_schema();
    let expect = [
        ("interacts", "agent", "agent"),
        ("on", "agent", "lane"),
        ("under", "lane", "agent"),
        ("crosses", "agent", "crosswalk"),
        ("overlaps", "crosswalk", "lane"),
        ("controls", "light", "lane"),
        ("signals", "light", "crosswalk"),
        ("stops", "stop", "lane"),
        ("connection", "lane", "lane"),
        ("conflict", "lane", "lane"),
        ("precedence", "lane", "lane"),
    ];
    assert_eq!(schema.relations().len(), expect.len());
    for (r, s, d) in expect {
        let id = schema.relation(r).unwrap();
        assert_eq!(schema.node_def(schema.dom(id)).name, s);
        assert_eq!(schema.node_def(schema.ran(id)).name, d);
    }
}

#[test]
fn counts_match_rule_enumeration() {
    let s = rich_scene();
    let g = assemble_graph(&s).unwrap();
    assert!(g.validate().is_empty());

    // every lane here is a straight segment, so corridor membership is a
    // rectangle test in the segment frame
    let mut on = 0;
    for a in &s.agents {
        for l in &s.lanes {
            let (p, q) = (l.centerline[0], l.centerline[1]);
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            let t = [(q[0] - p[0]) / len, (q[1] - p[1]) / len];
            let rel = [a.position[0] - p[0], a.position[1] - p[1]];
            let along = rel[0] * t[0] + rel[1] * t[1];
            let across = t[0] * rel[1] - t[1] * rel[0];
            if (0.0..=len).contains(&along) && across.abs() <= l.widths[0] / 2.0 {
                on += 1;
            }
        }
    }
    let crosses = s
        .agents
        .iter()
        .filter(|a| (3.5..=6.5).contains(&a.position[0]) && (-2.0..=6.0).contains(&a.position[1]))
        .count();
    let n = s.agents.len();
    assert_eq!(g.edge_count(INTERACTS), n * (n - 1));
    assert_eq!(g.edge_count(ON), on);
    assert_eq!(g.edge_count(UNDER), on);
    assert_eq!(g.edge_count(CROSSES), crosses);
    assert_eq!(g.edge_count(CONNECTION), 2);
    for r in [CONFLICT, PRECEDENCE, OVERLAPS, CONTROLS, SIGNALS, STOPS] {
        assert_eq!(g.edge_count(r), 1);
    }
    assert_eq!(
        [AGENT, LANE, CROSSWALK, STOP, LIGHT].map(|t| g.node_count(t)),
        [5, 3, 1, 1, 1]
    );
    assert_eq!((on, crosses), (6, 2));
}

#[test]
fn feature_rows_follow_the_tables() {
    let s = rich_scene();
    let g = assemble_graph(&s).unwrap();
    let a = g.nodes(AGENT).features.row(0);
    assert_eq!(&a[..8], &[1.0, 0.2, 4.0, 0.0, 0.1, -0.2, 0.0, 0.05]);
    assert_eq!(&a[20..24], &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(a[AGENT_STATIC_DIM - 1], 0.95);
    // first slot is invalid and zeroed, second is valid
    assert_eq!(&a[AGENT_STATIC_DIM..AGENT_STATIC_DIM + 4], &[0.0; 4]);
    assert_eq!(&a[AGENT_STATIC_DIM + 4..AGENT_STATIC_DIM + 8], &[-(29.0f64) * 0.1, 0.0, 0.0, 1.0]);

    let l = g.nodes(LANE).features.row(2);
    assert_eq!(&l[..9], &[1.0, 0.0, 0.0, 0.0, 20.0, 3.0, 3.0, 0.0, 13.9]);
    assert_eq!(g.nodes(CROSSWALK).features.data(), &[1.0]);
    assert_eq!(g.nodes(STOP).features.data(), &[1.0, 0.0, 0.0]);
    assert_eq!(g.nodes(LIGHT).features.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(g.edges(CONNECTION).features.row(0), &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(g.edges(STOPS).features.data(), &[3.0]);
    assert_eq!(g.edges(OVERLAPS).features.data(), &[1.0]);
}

#[test]
fn targets_and_masks() {
    let s = rich_scene();
    let (t, m) = s.targets(Task::Parked);
    assert_eq!(t, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(m, vec![false, true, false, false, false]);
    let (t, m) = s.targets(Task::Ghost);
    assert_eq!(t, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!(m, vec![false, true, false, true, false]);
}

#[test]
fn dangling_references() {
    let mut s = rich_scene();
    s.map_relations.push(MapRelation::Controls {
        from: "t0".into(),
        to: "nowhere".into(),
    });
    let err = assemble_graph(&s).unwrap_err();
    assert!(matches!(err, Error::Reference(ref m) if m.contains("nowhere")), "{err}");

    let mut s = rich_scene();
    s.labels.insert("ghost-agent".into(), AgentLabels::default());
    assert!(matches!(assemble_graph(&s), Err(Error::Reference(_))));
}

#[test]
fn invalid_values_are_rejected() {
    let mut s = rich_scene();
    s.agents[0].sensors[1].existence = 1.2;
    assert!(matches!(s.validate(), Err(Error::Schema(_))));
    let mut s = rich_scene();
    s.agents[2].trajectory.pop();
    assert!(matches!(s.validate(), Err(Error::Schema(ref m)) if m.contains("29")));
    let mut s = rich_scene();
    s.agents[1].variance.yaw = f64::NAN;
    assert!(s.validate().is_err());
    let mut s = rich_scene();
    s.agents[1].id = "a0".into();
    assert!(s.validate().is_err());
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    let mut s = rich_scene();
    s.agents[0].position = [0.1 + 0.2, 1.0 / 3.0];
    save_scene(&s, &path).unwrap();
    assert!(load_scene(&path).unwrap() == s, "round trip changed the scene");
}

#[test]
fn parse_errors_name_the_field() {
    let err = parse_scene(r#"{"lanes": [], "crosswalks": [], "stops": [], "lights": [], "map_relations": [], "labels": {}}"#)
        .unwrap_err();
    assert!(matches!(err, Error::Parse { ref message, .. } if message.contains("`agents`")), "{err}");

    let mut v = serde_json::to_value(rich_scene()).unwrap();
    v["agents"][2]["yaw"] = serde_json::json!("north");
    let err = parse_scene(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Parse { ref location, .. } if location.contains("agents[2].yaw")), "{err}");

    assert!(matches!(load_scene("/definitely/not/here.json"), Err(Error::MissingFile(_))));
}

#[test]
fn bundled_example_scene() {
    let s = load_scene(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/example_scene.json")).unwrap();
    assert_eq!(s.agents.len(), 4);
    assert_eq!(s.lanes.len(), 2);
    assert!(assemble_graph(&s).unwrap().validate().is_empty());
}

#[test]
fn json_schema_lists_the_document_keys() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schemas/scene.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut required: Vec<String> = schema["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    required.sort();
    let doc = serde_json::to_value(SceneDescription::default()).unwrap();
    let mut keys: Vec<String> = doc.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(required, keys);
    let agent_keys: Vec<String> = serde_json::to_value(agent("x", [0.0; 2], [0.0; 2], 0.0))
        .unwrap()
        .as_object()
        .unwrap()
        .keys()
        .cloned()
        .collect();
    let props = schema["$defs"]["agent"]["properties"].as_object().unwrap();
    for k in agent_keys {
        assert!(props.contains_key(&k), "agent property `{k}` missing from JSON schema");
    }
}

fn relative_features(s: &SceneDescription) -> Vec<f64> {
    let g = assemble_graph(s).unwrap();
    let mut out = Vec::new();
    let i = g.edges(INTERACTS);
    for k in 0..i.len() {
        let r = i.features.row(k);
        out.push(r[0].hypot(r[1]));
        out.extend_from_slice(&r[..4]);
        out.extend_from_slice(&[r[4].cos(), r[4].sin()]);
    }
    let u = g.edges(UNDER);
    for k in 0..u.len() {
        out.extend_from_slice(u.features.row(k));
    }
    out.push(g.edge_count(CROSSES) as f64);
    out.extend_from_slice(g.nodes(LANE).features.data());
    out
}

proptest! {
    #[test]
    fn rigid_motion_invariance(angle in -PI..PI, tx in -500.0..500.0f64, ty in -500.0..500.0f64) {
        let s = rich_scene();
        let base = relative_features(&s);
        let moved = relative_features(&s.transformed(angle, [tx, ty]));
        prop_assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn projection_matches_dense_sampling(
        bend in -1.2..1.2f64,
        px in 0.5..9.5f64,
        py in -1.5..1.5f64,
    ) {
        let pts = vec![[0.0, 0.0], [5.0, 0.0], [5.0 + 5.0 * bend.cos(), 5.0 * bend.sin()]];
        let l = lane("l", pts.clone(), 3.0);
        let a = agent("a", [px, py], [0.0; 2], 0.0);
        let e = derive_agent_map_relations(&[a], &[l], &[]).unwrap();
        let (s, d) = dense_projection(&pts, [px, py]);
        if d.abs() < 1.4 && !e.under.is_empty() {
            let row = e.under.features.row(0);
            prop_assert!((row[1] - s).abs() < 1e-3, "s {} vs {}", row[1], s);
            prop_assert!((row[2] - d).abs() < 1e-3, "d {} vs {}", row[2], d);
        }
        if d.abs() < 1.4 && s < 9.99 {
            prop_assert_eq!(e.on.len(), 1);
        }
    }
}

proptest! {
    #[test]
    fn interacts_match_pairwise_oracle(
        raw in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64, -5.0..5.0f64, -4.0..4.0f64), 0..6)
    ) {
        let agents: Vec<_> = raw
            .iter()
            .enumerate()
            .map(|(i, &(x, y, vx, vy, yaw))| agent(&i.to_string(), [x, y], [vx, vy], yaw))
            .collect();
        let e = derive_interacts(&agents);
        let oracle = interacts_oracle(&agents);
        prop_assert_eq!(e.len(), oracle.len());
        for (src, dst, f) in oracle {
            let k = (0..e.len()).find(|&k| e.src[k] == src && e.dst[k] == dst).unwrap();
            for (a, b) in e.features.row(k).iter().zip(f) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
