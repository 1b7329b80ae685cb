use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use super::geometry::{point_in_polygon, rotate, wrap_angle, Polyline};
use super::{
    AgentRecord, AgentType, BoundaryType, ConflictKind, ConnectionKind, CrosswalkRecord, LaneRecord, LaneType,
    LightKind, LightState, MapRelation, PrecedenceKind, SceneDescription, StopKind, TurnType, SENSORS, STEP_WIDTH,
    TRAJECTORY_STEPS,
};
use crate::error::Result;
use crate::graph::{EdgeSet, HeteroGraph, NodeSet, NodeType, NodeTypeDef, RelationDef, RelationId, Schema};
use crate::numeric::Tensor;

pub const AGENT: NodeType = NodeType(0);
pub const LANE: NodeType = NodeType(1);
pub const CROSSWALK: NodeType = NodeType(2);
pub const STOP: NodeType = NodeType(3);
pub const LIGHT: NodeType = NodeType(4);

pub const INTERACTS: RelationId = RelationId(0);
pub const ON: RelationId = RelationId(1);
pub const UNDER: RelationId = RelationId(2);
pub const CROSSES: RelationId = RelationId(3);
pub const OVERLAPS: RelationId = RelationId(4);
pub const CONTROLS: RelationId = RelationId(5);
pub const SIGNALS: RelationId = RelationId(6);
pub const STOPS: RelationId = RelationId(7);
pub const CONNECTION: RelationId = RelationId(8);
pub const CONFLICT: RelationId = RelationId(9);
pub const PRECEDENCE: RelationId = RelationId(10);

/// Static agent features: kinematics, variances, tracking, box, type,
/// sensor probabilities, fused existence.
pub const AGENT_STATIC_DIM: usize = 8 + 8 + 2 + 2 + 4 + 2 * SENSORS + 1;
pub const TRAJECTORY_DIM: usize = TRAJECTORY_STEPS * STEP_WIDTH;
/// Agent rows hold the static block followed by the raw trajectory block.
pub const AGENT_FEATURE_DIM: usize = AGENT_STATIC_DIM + TRAJECTORY_DIM;
const LANE_DIM: usize = 4 + 5 + 4 + 4 + 4;
const CROSSWALK_DIM: usize = 1;
const STOP_DIM: usize = 3;
const LIGHT_DIM: usize = 2 + 4 + 1;

const INTERACTS_DIM: usize = 5;
const UNDER_DIM: usize = 10 + 4;

const SPEED_STATIONARY: f64 = 0.5;

const RELATIONS: [(&str, NodeType, NodeType, usize); 11] = [
    ("interacts", AGENT, AGENT, INTERACTS_DIM),
    ("on", AGENT, LANE, 1),
    ("under", LANE, AGENT, UNDER_DIM),
    ("crosses", AGENT, CROSSWALK, 1),
    ("overlaps", CROSSWALK, LANE, 1),
    ("controls", LIGHT, LANE, 1),
    ("signals", LIGHT, CROSSWALK, 1),
    ("stops", STOP, LANE, 1),
    ("connection", LANE, LANE, 4),
    ("conflict", LANE, LANE, 3),
    ("precedence", LANE, LANE, 3),
];

pub(super) fn relation_name(r: RelationId) -> &'static str {
    RELATIONS[r.0].0
}

/// The scene ontology, shared by every scene graph.
pub fn scene_schema() -> Arc<Schema> {
    static SCHEMA: OnceLock<Arc<Schema>> = OnceLock::new();
    SCHEMA
        .get_or_init(|| {
            let nodes = [
                ("agent", AGENT_FEATURE_DIM),
                ("lane", LANE_DIM),
                ("crosswalk", CROSSWALK_DIM),
                ("stop", STOP_DIM),
                ("light", LIGHT_DIM),
            ]
            .into_iter()
            .map(|(name, feature_dim)| NodeTypeDef {
                name: name.into(),
                feature_dim,
            })
            .collect();
            let relations = RELATIONS
                .iter()
                .map(|&(name, src, dst, edge_dim)| RelationDef {
                    name: name.into(),
                    src,
                    dst,
                    edge_dim,
                })
                .collect();
            Arc::new(Schema::new(nodes, relations).expect("scene ontology is well formed"))
        })
        .clone()
}

/// Edges of one relation produced by a derivation step.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub features: Tensor<f64>,
}

impl DerivedEdges {
    fn from_rows(src: Vec<usize>, dst: Vec<usize>, rows: Vec<f64>, width: usize) -> Self {
        let n = src.len();
        DerivedEdges {
            src,
            dst,
            features: Tensor::from_vec(n, width, rows).expect("row-major edge features"),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn into_set(self) -> EdgeSet {
        EdgeSet::new(self.src, self.dst, self.features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Following,
    Crossing,
    Oncoming,
    Stationary,
}

impl Behavior {
    pub fn classify(speed: f64, heading_offset: f64) -> Behavior {
        let a = wrap_angle(heading_offset).abs().to_degrees();
        if speed < SPEED_STATIONARY {
            Behavior::Stationary
        } else if a < 45.0 {
            Behavior::Following
        } else if a <= 135.0 {
            Behavior::Crossing
        } else {
            Behavior::Oncoming
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

fn one_hot(out: &mut Vec<f64>, index: usize, len: usize) {
    out.extend((0..len).map(|i| if i == index { 1.0 } else { 0.0 }));
}

/// All ordered pairs of distinct agents. Features of `j → i` are expressed in
/// the frame of the destination `i`: Δposition, Δvelocity, Δheading.
pub fn derive_interacts(agents: &[AgentRecord]) -> DerivedEdges {
    let n = agents.len();
    let mut src = Vec::with_capacity(n * n.saturating_sub(1));
    let mut dst = Vec::with_capacity(src.capacity());
    let mut rows = Vec::with_capacity(src.capacity() * INTERACTS_DIM);
    for (i, a) in agents.iter().enumerate() {
        for (j, b) in agents.iter().enumerate() {
            if i == j {
                continue;
            }
            let dp = rotate([b.position[0] - a.position[0], b.position[1] - a.position[1]], -a.yaw);
            let dv = rotate([b.velocity[0] - a.velocity[0], b.velocity[1] - a.velocity[1]], -a.yaw);
            rows.extend_from_slice(&[dp[0], dp[1], dv[0], dv[1], wrap_angle(b.yaw - a.yaw)]);
            src.push(j);
            dst.push(i);
        }
    }
    DerivedEdges::from_rows(src, dst, rows, INTERACTS_DIM)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentMapEdges {
    pub on: DerivedEdges,
    pub under: DerivedEdges,
    pub crosses: DerivedEdges,
}

/// Lane membership by Frenet projection and crosswalk membership by polygon
/// containment.
///
/// `under` rows: assignment probability, s, d, ds/dt, dd/dt, local width,
/// local curvature, speed limit, gap to left and right boundary, behavior
/// one-hot (following, crossing, oncoming, stationary).
pub fn derive_agent_map_relations(
    agents: &[AgentRecord],
    lanes: &[LaneRecord],
    crosswalks: &[CrosswalkRecord],
) -> Result<AgentMapEdges> {
    let lines = lanes.iter().map(LaneRecord::polyline).collect::<Result<Vec<_>>>()?;
    let (mut on_src, mut on_dst) = (Vec::new(), Vec::new());
    let mut under_rows = Vec::new();
    for (a, agent) in agents.iter().enumerate() {
        for (l, (lane, line)) in lanes.iter().zip(&lines).enumerate() {
            let f = line.project(agent.position);
            let half = 0.5 * f.width;
            if f.overshoot > 1e-9 || f.d.abs() > half {
                continue;
            }
            on_src.push(a);
            on_dst.push(l);
            let normal = [-f.tangent[1], f.tangent[0]];
            let v = agent.velocity;
            let heading = f.tangent[1].atan2(f.tangent[0]);
            let behavior = Behavior::classify(agent.speed(), agent.yaw - heading);
            under_rows.extend_from_slice(&[
                1.0 - f.d.abs() / half,
                f.s,
                f.d,
                v[0] * f.tangent[0] + v[1] * f.tangent[1],
                v[0] * normal[0] + v[1] * normal[1],
                f.width,
                f.curvature,
                lane.speed_limit,
                half - f.d,
                half + f.d,
            ]);
            one_hot(&mut under_rows, behavior.index(), 4);
        }
    }
    let n_on = on_src.len();
    let on = DerivedEdges::from_rows(on_src.clone(), on_dst.clone(), vec![1.0; n_on], 1);
    let under = DerivedEdges::from_rows(on_dst, on_src, under_rows, UNDER_DIM);

    let (mut cr_src, mut cr_dst) = (Vec::new(), Vec::new());
    for (a, agent) in agents.iter().enumerate() {
        for (c, cw) in crosswalks.iter().enumerate() {
            if point_in_polygon(agent.position, &cw.polygon) {
                cr_src.push(a);
                cr_dst.push(c);
            }
        }
    }
    let n_cr = cr_src.len();
    let crosses = DerivedEdges::from_rows(cr_src, cr_dst, vec![1.0; n_cr], 1);
    Ok(AgentMapEdges { on, under, crosses })
}

fn agent_row(a: &AgentRecord, out: &mut Vec<f64>) {
    let v = &a.variance;
    out.extend_from_slice(&[
        a.position[0],
        a.position[1],
        a.velocity[0],
        a.velocity[1],
        a.acceleration[0],
        a.acceleration[1],
        a.yaw,
        a.yaw_rate,
        v.position[0],
        v.position[1],
        v.velocity[0],
        v.velocity[1],
        v.acceleration[0],
        v.acceleration[1],
        v.yaw,
        v.yaw_rate,
        a.max_velocity,
        a.tracked_time,
        a.length,
        a.width,
    ]);
    one_hot(out, a.agent_type.index(), AgentType::ALL.len());
    for s in &a.sensors {
        out.extend_from_slice(&[s.detection, s.existence]);
    }
    out.push(a.existence_confidence);
    for st in &a.trajectory {
        if st.valid {
            out.extend_from_slice(&[st.dx, st.dy, st.dyaw, 1.0]);
        } else {
            out.extend_from_slice(&[0.0; STEP_WIDTH]);
        }
    }
}

fn lane_row(l: &LaneRecord, line: &Polyline, out: &mut Vec<f64>) {
    one_hot(out, l.lane_type.index(), LaneType::ALL.len());
    out.extend_from_slice(&[
        line.length(),
        line.min_width(),
        line.max_width(),
        line.max_abs_curvature(),
        l.speed_limit,
    ]);
    one_hot(out, l.left_boundary.index(), BoundaryType::ALL.len());
    one_hot(out, l.right_boundary.index(), BoundaryType::ALL.len());
    one_hot(out, l.turn.index(), TurnType::ALL.len());
}

fn node_set(rows: Vec<f64>, n: usize, width: usize) -> NodeSet {
    NodeSet::new(Tensor::from_vec(n, width, rows).expect("row-major node features"))
}

/// Builds the typed scene graph. Nodes keep the order of the description.
pub fn assemble_graph(scene: &SceneDescription) -> Result<HeteroGraph> {
    scene.validate()?;
    let schema = scene_schema();
    let lines = scene.lanes.iter().map(LaneRecord::polyline).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(scene.agents.len() * AGENT_FEATURE_DIM);
    scene.agents.iter().for_each(|a| agent_row(a, &mut rows));
    let agents = node_set(rows, scene.agents.len(), AGENT_FEATURE_DIM);

    let mut rows = Vec::new();
    scene.lanes.iter().zip(&lines).for_each(|(l, line)| lane_row(l, line, &mut rows));
    let lanes = node_set(rows, scene.lanes.len(), LANE_DIM);

    let rows = scene.crosswalks.iter().map(|c| f64::from(u8::from(c.signaled))).collect();
    let crosswalks = node_set(rows, scene.crosswalks.len(), CROSSWALK_DIM);

    let mut rows = Vec::new();
    scene.stops.iter().for_each(|s| one_hot(&mut rows, s.kind.index(), StopKind::ALL.len()));
    let stops = node_set(rows, scene.stops.len(), STOP_DIM);

    let mut rows = Vec::new();
    for l in &scene.lights {
        one_hot(&mut rows, l.kind.index(), LightKind::ALL.len());
        one_hot(&mut rows, l.state.index(), LightState::ALL.len());
        rows.push(f64::from(u8::from(l.deactivatable)));
    }
    let lights = node_set(rows, scene.lights.len(), LIGHT_DIM);

    let index = |ids: Vec<&str>| -> HashMap<String, usize> {
        ids.into_iter().enumerate().map(|(i, id)| (id.to_string(), i)).collect()
    };
    let lane_ix = index(scene.lanes.iter().map(|l| l.id.as_str()).collect());
    let cw_ix = index(scene.crosswalks.iter().map(|c| c.id.as_str()).collect());
    let stop_ix = index(scene.stops.iter().map(|s| s.id.as_str()).collect());
    let light_ix = index(scene.lights.iter().map(|l| l.id.as_str()).collect());

    let mut explicit: Vec<(Vec<usize>, Vec<usize>, Vec<f64>)> = vec![Default::default(); RELATIONS.len()];
    for rel in &scene.map_relations {
        let (from, to) = rel.endpoints();
        let (src_ix, dst_ix) = match rel {
            MapRelation::Connection { .. } | MapRelation::Conflict { .. } | MapRelation::Precedence { .. } => {
                (&lane_ix, &lane_ix)
            }
            MapRelation::Overlaps { .. } => (&cw_ix, &lane_ix),
            MapRelation::Controls { .. } => (&light_ix, &lane_ix),
            MapRelation::Signals { .. } => (&light_ix, &cw_ix),
            MapRelation::Stops { .. } => (&stop_ix, &lane_ix),
        };
        let slot = &mut explicit[rel.relation().0];
        slot.0.push(src_ix[from]);
        slot.1.push(dst_ix[to]);
        match rel {
            MapRelation::Connection { kind, .. } => one_hot(&mut slot.2, kind.index(), ConnectionKind::ALL.len()),
            MapRelation::Conflict { kind, .. } => one_hot(&mut slot.2, kind.index(), ConflictKind::ALL.len()),
            MapRelation::Precedence { kind, .. } => one_hot(&mut slot.2, kind.index(), PrecedenceKind::ALL.len()),
            MapRelation::Stops { station, .. } => slot.2.push(*station),
            _ => slot.2.push(1.0),
        }
    }

    let interacts = derive_interacts(&scene.agents);
    let AgentMapEdges { on, under, crosses } =
        derive_agent_map_relations(&scene.agents, &scene.lanes, &scene.crosswalks)?;
    let mut derived = [Some(interacts), Some(on), Some(under), Some(crosses)];
    let edges = RELATIONS
        .iter()
        .enumerate()
        .map(|(r, &(_, _, _, width))| match derived.get_mut(r).and_then(Option::take) {
            Some(d) => d.into_set(),
            None => {
                let (src, dst, rows) = std::mem::take(&mut explicit[r]);
                DerivedEdges::from_rows(src, dst, rows, width).into_set()
            }
        })
        .collect();
    HeteroGraph::new(schema, vec![agents, lanes, crosswalks, stops, lights], edges)
}
