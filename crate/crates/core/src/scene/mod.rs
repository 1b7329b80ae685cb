//! Traffic scenes: the JSON scene description and its conversion into a
//! typed graph over agents, lanes, crosswalks, stops and lights.

mod assemble;
pub mod geometry;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationId;

pub use assemble::{
    assemble_graph, derive_agent_map_relations, derive_interacts, scene_schema, AgentMapEdges, Behavior,
    DerivedEdges, AGENT, AGENT_FEATURE_DIM, AGENT_STATIC_DIM, CONFLICT, CONNECTION, CONTROLS, CROSSES, CROSSWALK,
    INTERACTS, LANE, LIGHT, ON, OVERLAPS, PRECEDENCE, SIGNALS, STOP, STOPS, TRAJECTORY_DIM, UNDER,
};

/// Number of trajectory slots per agent.
pub const TRAJECTORY_STEPS: usize = 30;
/// Values per trajectory slot: Δx, Δy, Δyaw, valid flag.
pub const STEP_WIDTH: usize = 4;
/// Number of sensors reporting detection and existence probabilities.
pub const SENSORS: usize = 3;

macro_rules! categories {
    ($(#[$m:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&v| v == self).unwrap()
            }
        }
    };
}

categories!(AgentType { Car, Truck, TwoWheeler, Pedestrian });
categories!(LaneType { Car, Bike, Shoulder, Parking });
categories!(BoundaryType { Solid, Dashed, Curb, None });
categories!(TurnType { Straight, Left, Right, UTurn });
categories!(StopKind { Stop, Crosswalk, Yield });
categories!(LightKind { Car, Pedestrian });
categories!(LightState { Red, Yellow, Green, Off });
categories!(ConnectionKind { Precede, Succeed, LeftNeighbor, RightNeighbor });
categories!(ConflictKind { Cross, Merge, Diverge });
categories!(PrecedenceKind { Higher, Lower, Equal });

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
    pub valid: bool,
}

impl TrajectoryStep {
    pub const INVALID: TrajectoryStep = TrajectoryStep {
        dx: 0.0,
        dy: 0.0,
        dyaw: 0.0,
        valid: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub detection: f64,
    pub existence: f64,
}

/// Diagonal state covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVariance {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub yaw: f64,
    pub yaw_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: String,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub yaw: f64,
    pub yaw_rate: f64,
    pub variance: StateVariance,
    pub max_velocity: f64,
    pub tracked_time: f64,
    pub length: f64,
    pub width: f64,
    pub agent_type: AgentType,
    pub sensors: [SensorReading; SENSORS],
    pub existence_confidence: f64,
    /// Oldest first; offsets are expressed in the agent's current frame.
    pub trajectory: Vec<TrajectoryStep>,
}

impl AgentRecord {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneRecord {
    pub id: String,
    pub centerline: Vec<[f64; 2]>,
    /// One width per centerline point.
    pub widths: Vec<f64>,
    pub lane_type: LaneType,
    pub speed_limit: f64,
    pub left_boundary: BoundaryType,
    pub right_boundary: BoundaryType,
    pub turn: TurnType,
}

impl LaneRecord {
    pub fn polyline(&self) -> Result<geometry::Polyline> {
        geometry::Polyline::new(&self.centerline, &self.widths)
            .map_err(|e| Error::Geometry(format!("lane `{}`: {}", self.id, strip_prefix(&e))))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Geometry(m) => m.clone(),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkRecord {
    pub id: String,
    pub polygon: Vec<[f64; 2]>,
    pub signaled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub id: String,
    pub kind: StopKind,
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRecord {
    pub id: String,
    pub kind: LightKind,
    pub state: LightState,
    pub deactivatable: bool,
    pub position: [f64; 2],
}

/// Explicit link between map entities, tagged by relation name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum MapRelation {
    Connection { from: String, to: String, kind: ConnectionKind },
    Conflict { from: String, to: String, kind: ConflictKind },
    Precedence { from: String, to: String, kind: PrecedenceKind },
    /// Crosswalk → lane.
    Overlaps { from: String, to: String },
    /// Light → lane.
    Controls { from: String, to: String },
    /// Light → crosswalk.
    Signals { from: String, to: String },
    /// Stop → lane, at longitudinal position `station` along the lane.
    Stops { from: String, to: String, station: f64 },
}

impl MapRelation {
    pub fn endpoints(&self) -> (&str, &str) {
        match self {
            MapRelation::Connection { from, to, .. }
            | MapRelation::Conflict { from, to, .. }
            | MapRelation::Precedence { from, to, .. }
            | MapRelation::Overlaps { from, to }
            | MapRelation::Controls { from, to }
            | MapRelation::Signals { from, to }
            | MapRelation::Stops { from, to, .. } => (from, to),
        }
    }

    pub fn name(&self) -> &'static str {
        assemble::relation_name(self.relation())
    }

    pub fn relation(&self) -> RelationId {
        match self {
            MapRelation::Connection { .. } => CONNECTION,
            MapRelation::Conflict { .. } => CONFLICT,
            MapRelation::Precedence { .. } => PRECEDENCE,
            MapRelation::Overlaps { .. } => OVERLAPS,
            MapRelation::Controls { .. } => CONTROLS,
            MapRelation::Signals { .. } => SIGNALS,
            MapRelation::Stops { .. } => STOPS,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentLabels {
    pub parked: Option<bool>,
    pub ghost: Option<bool>,
}

/// Binary per-agent classification tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Parked,
    Ghost,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Parked, Task::Ghost];

    pub fn name(self) -> &'static str {
        match self {
            Task::Parked => "parked",
            Task::Ghost => "ghost",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parked" => Ok(Task::Parked),
            "ghost" => Ok(Task::Ghost),
            other => Err(Error::Config(format!("unknown task `{other}` (expected parked or ghost)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub agents: Vec<AgentRecord>,
    pub lanes: Vec<LaneRecord>,
    pub crosswalks: Vec<CrosswalkRecord>,
    pub stops: Vec<StopRecord>,
    pub lights: Vec<LightRecord>,
    pub map_relations: Vec<MapRelation>,
    /// Agent id → labels. Agents without an entry are unlabeled.
    pub labels: BTreeMap<String, AgentLabels>,
}

fn check_probability(what: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Schema(format!("{what} = {v} is not a probability")));
    }
    Ok(())
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

fn unique_ids<'a>(kind: &str, ids: impl Iterator<Item = &'a str>) -> Result<HashSet<&'a str>> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Schema(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(seen)
}

impl SceneDescription {
    /// Checks value ranges, trajectory lengths, id uniqueness and references.
    pub fn validate(&self) -> Result<()> {
        let agents = unique_ids("agent", self.agents.iter().map(|a| a.id.as_str()))?;
        let lanes = unique_ids("lane", self.lanes.iter().map(|l| l.id.as_str()))?;
        let crosswalks = unique_ids("crosswalk", self.crosswalks.iter().map(|c| c.id.as_str()))?;
        let stops = unique_ids("stop", self.stops.iter().map(|s| s.id.as_str()))?;
        let lights = unique_ids("light", self.lights.iter().map(|l| l.id.as_str()))?;

        for a in &self.agents {
            let ctx = |f: &str| format!("agent `{}` {f}", a.id);
            let v = &a.variance;
            check_finite(
                &ctx("state"),
                &[
                    a.position[0],
                    a.position[1],
                    a.velocity[0],
                    a.velocity[1],
                    a.acceleration[0],
                    a.acceleration[1],
                    a.yaw,
                    a.yaw_rate,
                    a.max_velocity,
                    a.tracked_time,
                    a.length,
                    a.width,
                ],
            )?;
            check_finite(
                &ctx("variance"),
                &[
                    v.position[0],
                    v.position[1],
                    v.velocity[0],
                    v.velocity[1],
                    v.acceleration[0],
                    v.acceleration[1],
                    v.yaw,
                    v.yaw_rate,
                ],
            )?;
            for s in &a.sensors {
                check_probability(&ctx("detection probability"), s.detection)?;
                check_probability(&ctx("existence probability"), s.existence)?;
            }
            check_probability(&ctx("existence confidence"), a.existence_confidence)?;
            if a.trajectory.len() != TRAJECTORY_STEPS {
                return Err(Error::Schema(format!(
                    "agent `{}` has {} trajectory slots, expected {TRAJECTORY_STEPS}",
                    a.id,
                    a.trajectory.len()
                )));
            }
            for st in &a.trajectory {
                check_finite(&ctx("trajectory"), &[st.dx, st.dy, st.dyaw])?;
            }
        }
        for l in &self.lanes {
            check_finite(&format!("lane `{}` speed limit", l.id), &[l.speed_limit])?;
            for p in &l.centerline {
                check_finite(&format!("lane `{}` centerline", l.id), p)?;
            }
            l.polyline()?;
        }
        for c in &self.crosswalks {
            if c.polygon.len() < 3 {
                return Err(Error::Geometry(format!("crosswalk `{}` polygon has fewer than 3 points", c.id)));
            }
        }
        for r in &self.map_relations {
            let (from, to) = r.endpoints();
            let (src, dst, src_kind, dst_kind) = match r {
                MapRelation::Connection { .. } | MapRelation::Conflict { .. } | MapRelation::Precedence { .. } => {
                    (&lanes, &lanes, "lane", "lane")
                }
                MapRelation::Overlaps { .. } => (&crosswalks, &lanes, "crosswalk", "lane"),
                MapRelation::Controls { .. } => (&lights, &lanes, "light", "lane"),
                MapRelation::Signals { .. } => (&lights, &crosswalks, "light", "crosswalk"),
                MapRelation::Stops { station, .. } => {
                    check_finite("stops station", &[*station])?;
                    (&stops, &lanes, "stop", "lane")
                }
            };
            if !src.contains(from) {
                return Err(Error::Reference(format!("{} source {src_kind} `{from}` does not exist", r.name())));
            }
            if !dst.contains(to) {
                return Err(Error::Reference(format!("{} target {dst_kind} `{to}` does not exist", r.name())));
            }
        }
        for id in self.labels.keys() {
            if !agents.contains(id.as_str()) {
                return Err(Error::Reference(format!("labels refer to unknown agent `{id}`")));
            }
        }
        Ok(())
    }

    /// Per-agent target and mask for `task`, in agent order. Unlabeled agents
    /// get target 0 and mask false.
    pub fn targets(&self, task: Task) -> (Vec<f64>, Vec<bool>) {
        self.agents
            .iter()
            .map(|a| {
                let label = self.labels.get(&a.id).and_then(|l| match task {
                    Task::Parked => l.parked,
                    Task::Ghost => l.ghost,
                });
                match label {
                    Some(v) => (if v { 1.0 } else { 0.0 }, true),
                    None => (0.0, false),
                }
            })
            .unzip()
    }

    /// Rigidly rotates the scene by `angle` about the origin, then translates
    /// it by `offset`. Agent-frame quantities (trajectory offsets) and
    /// variances are left as they are.
    pub fn transformed(&self, angle: f64, offset: [f64; 2]) -> SceneDescription {
        use geometry::{rotate, wrap_angle};
        let point = |p: [f64; 2]| {
            let r = rotate(p, angle);
            [r[0] + offset[0], r[1] + offset[1]]
        };
        let mut out = self.clone();
        for a in &mut out.agents {
            a.position = point(a.position);
            a.velocity = rotate(a.velocity, angle);
            a.acceleration = rotate(a.acceleration, angle);
            a.yaw = wrap_angle(a.yaw + angle);
        }
        for l in &mut out.lanes {
            l.centerline.iter_mut().for_each(|p| *p = point(*p));
        }
        for c in &mut out.crosswalks {
            c.polygon.iter_mut().for_each(|p| *p = point(*p));
        }
        for s in &mut out.stops {
            s.position = point(s.position);
        }
        for l in &mut out.lights {
            l.position = point(l.position);
        }
        out
    }
}

/// Parses a scene document; errors carry the field path and line.
pub fn parse_scene(text: &str) -> Result<SceneDescription> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            location: format!("`{path}` (line {}, column {})", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneDescription> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_scene(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn save_scene(scene: &SceneDescription, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), scene)?;
    Ok(())
}
