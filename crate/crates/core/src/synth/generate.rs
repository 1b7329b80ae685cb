//! Seeded generator of labeled road-corridor scenes.
//!
//! Each scene is a corridor of car lanes in both directions, optionally with
//! a parking lane, a crossing road, a crosswalk and a stop sign or traffic
//! light before the junction. Vehicles are parked, queued at the stop line,
//! stalled in the lane, recently stopped or moving; pedestrians walk on the
//! crosswalk or the sidewalk. Some agents are turned into ghosts.
//!
//! Labels follow fixed rules evaluated on the noise-free state:
//!
//! * parked: the speed stayed below `parked.max_speed` over the whole
//!   history, and the agent is on a parking lane or its lateral offset exceeds
//!   `parked.offset_fraction` of the half width. With `red_light_exempt`, an
//!   agent on a lane controlled by a red light is never parked. Pedestrians
//!   and ghosts carry no parked label.
//! * ghost: moving against the lane direction, all sensor existence
//!   probabilities below `ghost.existence_below`, or more than
//!   `ghost.max_gap_fraction` of the history invalid.
//!
//! Every label is then flipped with probability `label_noise`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::scene::geometry::{rotate, wrap_angle, Point, Polyline};
use crate::scene::{
    AgentLabels, AgentRecord, AgentType, BoundaryType, ConflictKind, ConnectionKind, CrosswalkRecord, LaneRecord,
    LaneType, LightKind, LightRecord, LightState, MapRelation, PrecedenceKind, SceneDescription, SensorReading,
    StateVariance, StopKind, StopRecord, TrajectoryStep, TurnType, SENSORS, TRAJECTORY_STEPS,
};

/// Time between trajectory samples in seconds.
pub const STEP_SECONDS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParkedRule {
    pub max_speed: f64,
    pub offset_fraction: f64,
    pub red_light_exempt: bool,
}

impl Default for ParkedRule {
    fn default() -> Self {
        ParkedRule {
            max_speed: 0.3,
            offset_fraction: 0.7,
            red_light_exempt: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhostRule {
    /// Share of agents turned into ghosts.
    pub rate: f64,
    pub existence_below: f64,
    pub max_gap_fraction: f64,
}

impl Default for GhostRule {
    fn default() -> Self {
        GhostRule {
            rate: 0.12,
            existence_below: 0.4,
            max_gap_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Inclusive range of agents per scene.
    pub agents: [usize; 2],
    /// Inclusive range of corridor car lanes per scene (both directions).
    pub lanes: [usize; 2],
    pub lane_length: [f64; 2],
    pub lane_width: [f64; 2],
    pub curve_prob: f64,
    pub parking_lane_prob: f64,
    pub crossing_prob: f64,
    pub crosswalk_prob: f64,
    pub light_prob: f64,
    pub stop_prob: f64,
    pub red_prob: f64,
    /// Share of vehicles placed in a parking position.
    pub parked_fraction: f64,
    pub pedestrian_prob: f64,
    pub parked: ParkedRule,
    pub ghost: GhostRule,
    pub label_noise: f64,
    pub position_noise: f64,
    pub velocity_noise: f64,
    /// Half extent of the random scene translation in meters.
    pub max_offset: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scenes: 5000,
            seed: 0,
            agents: [5, 14],
            lanes: [2, 4],
            lane_length: [50.0, 90.0],
            lane_width: [3.0, 3.8],
            curve_prob: 0.3,
            parking_lane_prob: 0.5,
            crossing_prob: 0.4,
            crosswalk_prob: 0.5,
            light_prob: 0.5,
            stop_prob: 0.4,
            red_prob: 0.6,
            parked_fraction: 0.36,
            pedestrian_prob: 0.08,
            parked: ParkedRule::default(),
            ghost: GhostRule::default(),
            label_noise: 0.05,
            position_noise: 0.05,
            velocity_noise: 0.04,
            max_offset: 30.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("curve_prob", self.curve_prob),
            ("parking_lane_prob", self.parking_lane_prob),
            ("crossing_prob", self.crossing_prob),
            ("crosswalk_prob", self.crosswalk_prob),
            ("light_prob", self.light_prob),
            ("stop_prob", self.stop_prob),
            ("red_prob", self.red_prob),
            ("parked_fraction", self.parked_fraction),
            ("pedestrian_prob", self.pedestrian_prob),
            ("ghost.rate", self.ghost.rate),
            ("ghost.existence_below", self.ghost.existence_below),
            ("ghost.max_gap_fraction", self.ghost.max_gap_fraction),
            ("parked.offset_fraction", self.parked.offset_fraction),
            ("label_noise", self.label_noise),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.agents[0] > self.agents[1] || self.lanes[0] > self.lanes[1] {
            return Err(Error::Config("empty agents or lanes range".into()));
        }
        if self.lanes[1] == 0 && self.agents[1] > 0 {
            return Err(Error::Config("agents need at least one lane to be placed on".into()));
        }
        for (name, r, floor) in [
            ("lane_length", self.lane_length, 30.0),
            ("lane_width", self.lane_width, 1.0),
        ] {
            if !(r[0] <= r[1] && r[0] >= floor && r[1].is_finite()) {
                return Err(Error::Config(format!("{name} range {r:?} must be ordered and at least {floor}")));
            }
        }
        let nonneg = [
            ("parked.max_speed", self.parked.max_speed),
            ("position_noise", self.position_noise),
            ("velocity_noise", self.velocity_noise),
            ("max_offset", self.max_offset),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Counts of planted labels over a set of scenes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenAudit {
    pub scenes: usize,
    pub agents: usize,
    pub parked_labeled: usize,
    pub parked_positive: usize,
    pub ghost_positive: usize,
}

impl GenAudit {
    pub fn of(scenes: &[SceneDescription]) -> Self {
        let mut a = GenAudit {
            scenes: scenes.len(),
            ..Default::default()
        };
        for s in scenes {
            a.agents += s.agents.len();
            for l in s.labels.values() {
                if let Some(p) = l.parked {
                    a.parked_labeled += 1;
                    a.parked_positive += p as usize;
                }
                a.ghost_positive += (l.ghost == Some(true)) as usize;
            }
        }
        a
    }

    pub fn parked_share(&self) -> f64 {
        self.parked_positive as f64 / self.parked_labeled.max(1) as f64
    }
}

/// Generates `cfg.scenes` scenes; scene `i` depends only on `(cfg, i)`.
pub fn generate(cfg: &GenConfig) -> Result<Vec<SceneDescription>> {
    cfg.validate()?;
    (0..cfg.scenes).map(|i| generate_scene(cfg, i)).collect()
}

pub fn generate_scene(cfg: &GenConfig, index: usize) -> Result<SceneDescription> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let mut b = SceneGen::new(cfg, &mut rng);
    b.build_map();
    let n_agents = b.rng.gen_range(cfg.agents[0]..=cfg.agents[1]);
    for k in 0..n_agents {
        b.add_agent(k);
    }
    let mut scene = b.finish()?;
    let angle = rng.gen_range(-PI..PI);
    let offset = [
        rng.gen_range(-1.0..=1.0) * cfg.max_offset,
        rng.gen_range(-1.0..=1.0) * cfg.max_offset,
    ];
    scene = scene.transformed(angle, offset);
    for a in &mut scene.agents {
        a.yaw = wrap_angle(a.yaw);
    }
    scene.validate()?;
    Ok(scene)
}

/// Corridor reference line: heading grows linearly with arc length.
#[derive(Clone, Copy, Debug)]
struct Corridor {
    length: f64,
    curvature: f64,
}

impl Corridor {
    fn heading(&self, s: f64) -> f64 {
        self.curvature * s
    }

    fn center(&self, s: f64) -> Point {
        if self.curvature.abs() < 1e-12 {
            [s, 0.0]
        } else {
            let k = self.curvature;
            [(k * s).sin() / k, (1.0 - (k * s).cos()) / k]
        }
    }

    /// Point at arc length `s` shifted `offset` to the left.
    fn pose(&self, s: f64, offset: f64) -> Point {
        let c = self.center(s);
        let h = self.heading(s);
        [c[0] - offset * h.sin(), c[1] + offset * h.cos()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Dir {
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
struct LaneInfo {
    dir: Dir,
    /// Lateral offset of the centerline from the reference line.
    offset: f64,
    width: f64,
    parking: bool,
    /// Index of the traffic light controlling it, if any.
    light: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Motion {
    Stationary,
    Moving { speed: f64 },
    /// Decelerated to a stop `ago` seconds before the current time.
    Stopped { ago: f64, decel: f64 },
}

impl Motion {
    /// Distance travelled backwards in time over `tau ≥ 0` seconds and the
    /// speed at that moment.
    fn back(&self, tau: f64) -> (f64, f64) {
        match *self {
            Motion::Stationary => (0.0, 0.0),
            Motion::Moving { speed } => (speed * tau, speed),
            Motion::Stopped { ago, decel } => {
                if tau <= ago {
                    (0.0, 0.0)
                } else {
                    let t = tau - ago;
                    (0.5 * decel * t * t, decel * t)
                }
            }
        }
    }

    fn max_speed(&self) -> f64 {
        let horizon = TRAJECTORY_STEPS as f64 * STEP_SECONDS;
        self.back(horizon).1
    }
}

struct SceneGen<'a> {
    cfg: &'a GenConfig,
    rng: &'a mut Rng,
    corridor: Corridor,
    lanes: Vec<LaneInfo>,
    records: Vec<LaneRecord>,
    stop_s: f64,
    has_crosswalk: bool,
    crossing: Option<usize>,
    stop_sign: bool,
    lights: Vec<LightRecord>,
    scene: SceneDescription,
    queue_len: Vec<usize>,
    normal: Normal<f64>,
}

fn lane_id(k: usize) -> String {
    format!("l{k}")
}

impl<'a> SceneGen<'a> {
    fn new(cfg: &'a GenConfig, rng: &'a mut Rng) -> Self {
        let length = rng.gen_range(cfg.lane_length[0]..=cfg.lane_length[1]);
        let curvature = if rng.gen_bool(cfg.curve_prob) {
            rng.gen_range(1.0 / 400.0..1.0 / 120.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            0.0
        };
        SceneGen {
            cfg,
            rng,
            corridor: Corridor { length, curvature },
            lanes: Vec::new(),
            records: Vec::new(),
            stop_s: 0.75 * length,
            has_crosswalk: false,
            crossing: None,
            stop_sign: false,
            lights: Vec::new(),
            scene: SceneDescription::default(),
            queue_len: Vec::new(),
            normal: Normal::new(0.0, 1.0).unwrap(),
        }
    }

    fn gauss(&mut self, sigma: f64) -> f64 {
        sigma * self.normal.sample(self.rng)
    }

    fn build_map(&mut self) {
        let cfg = self.cfg;
        let n = self.rng.gen_range(cfg.lanes[0]..=cfg.lanes[1]);
        if n == 0 {
            return;
        }
        let n_fwd = n.div_ceil(2);
        let mut right = 0.0;
        for _ in 0..n_fwd {
            let w = self.rng.gen_range(cfg.lane_width[0]..=cfg.lane_width[1]);
            self.lanes.push(LaneInfo {
                dir: Dir::Forward,
                offset: -(right + w / 2.0),
                width: w,
                parking: false,
                light: None,
            });
            right += w;
        }
        let mut left = 0.0;
        for _ in n_fwd..n {
            let w = self.rng.gen_range(cfg.lane_width[0]..=cfg.lane_width[1]);
            self.lanes.push(LaneInfo {
                dir: Dir::Backward,
                offset: left + w / 2.0,
                width: w,
                parking: false,
                light: None,
            });
            left += w;
        }
        if self.rng.gen_bool(cfg.parking_lane_prob) {
            let w = self.rng.gen_range(2.2..2.8);
            self.lanes.push(LaneInfo {
                dir: Dir::Forward,
                offset: -(right + w / 2.0),
                width: w,
                parking: true,
                light: None,
            });
            right += w;
        }
        let corridor = self.corridor;
        for (k, info) in self.lanes.iter().enumerate() {
            let steps = (corridor.length / 5.0).ceil() as usize;
            let mut pts: Vec<Point> = (0..=steps)
                .map(|i| corridor.pose(corridor.length * i as f64 / steps as f64, info.offset))
                .collect();
            if info.dir == Dir::Backward {
                pts.reverse();
            }
            self.records.push(LaneRecord {
                id: lane_id(k),
                widths: vec![info.width; pts.len()],
                centerline: pts,
                lane_type: if info.parking { LaneType::Parking } else { LaneType::Car },
                speed_limit: if info.parking { 2.8 } else { [8.3, 13.9, 16.7][k % 3] },
                left_boundary: BoundaryType::Dashed,
                right_boundary: if info.parking { BoundaryType::Curb } else { BoundaryType::Solid },
                turn: TurnType::Straight,
            });
        }
        self.queue_len = vec![0; self.lanes.len()];
        self.neighbor_relations();

        let stop_s = self.stop_s;
        let road = (-right, left);
        if self.rng.gen_bool(cfg.crossing_prob) {
            let s = stop_s + 8.0;
            let a = corridor.pose(s, road.0 - 15.0);
            let b = corridor.pose(s, road.1 + 15.0);
            let k = self.records.len();
            let w = self.rng.gen_range(cfg.lane_width[0]..=cfg.lane_width[1]);
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            self.records.push(LaneRecord {
                id: lane_id(k),
                centerline: vec![a, mid, b],
                widths: vec![w; 3],
                lane_type: LaneType::Car,
                speed_limit: 8.3,
                left_boundary: BoundaryType::Solid,
                right_boundary: BoundaryType::Solid,
                turn: TurnType::Straight,
            });
            self.crossing = Some(k);
            for j in 0..self.lanes.len() {
                if self.lanes[j].parking {
                    continue;
                }
                for (from, to, kind) in [(k, j, PrecedenceKind::Lower), (j, k, PrecedenceKind::Higher)] {
                    self.scene.map_relations.push(MapRelation::Conflict {
                        from: lane_id(from),
                        to: lane_id(to),
                        kind: ConflictKind::Cross,
                    });
                    self.scene.map_relations.push(MapRelation::Precedence {
                        from: lane_id(from),
                        to: lane_id(to),
                        kind,
                    });
                }
            }
        }

        let forward_car: Vec<usize> = (0..self.lanes.len())
            .filter(|&j| self.lanes[j].dir == Dir::Forward && !self.lanes[j].parking)
            .collect();
        if self.rng.gen_bool(cfg.light_prob) {
            let state = if self.rng.gen_bool(cfg.red_prob) {
                LightState::Red
            } else if self.rng.gen_bool(0.8) {
                LightState::Green
            } else {
                LightState::Yellow
            };
            self.lights.push(LightRecord {
                id: "t0".into(),
                kind: LightKind::Car,
                state,
                deactivatable: self.rng.gen_bool(0.2),
                position: corridor.pose(stop_s, road.0 - 1.5),
            });
            for &j in &forward_car {
                self.lanes[j].light = Some(0);
                self.scene.map_relations.push(MapRelation::Controls {
                    from: "t0".into(),
                    to: lane_id(j),
                });
            }
        } else if self.rng.gen_bool(cfg.stop_prob) {
            self.stop_sign = true;
            self.scene.stops.push(StopRecord {
                id: "s0".into(),
                kind: StopKind::Stop,
                position: corridor.pose(stop_s, road.0 - 1.0),
            });
            for &j in &forward_car {
                self.scene.map_relations.push(MapRelation::Stops {
                    from: "s0".into(),
                    to: lane_id(j),
                    station: stop_s,
                });
            }
        }
        if self.rng.gen_bool(cfg.crosswalk_prob) {
            self.has_crosswalk = true;
            let (s0, s1) = (stop_s + 1.0, stop_s + 4.0);
            let polygon = vec![
                corridor.pose(s0, road.0 - 0.5),
                corridor.pose(s1, road.0 - 0.5),
                corridor.pose(s1, road.1 + 0.5),
                corridor.pose(s0, road.1 + 0.5),
            ];
            let signaled = !self.lights.is_empty();
            self.scene.crosswalks.push(CrosswalkRecord {
                id: "c0".into(),
                polygon,
                signaled,
            });
            for j in 0..self.lanes.len() {
                self.scene.map_relations.push(MapRelation::Overlaps {
                    from: "c0".into(),
                    to: lane_id(j),
                });
            }
            if signaled {
                let car = self.lights[0].state;
                self.lights.push(LightRecord {
                    id: "t1".into(),
                    kind: LightKind::Pedestrian,
                    state: if car == LightState::Red { LightState::Green } else { LightState::Red },
                    deactivatable: false,
                    position: corridor.pose(s0, road.0 - 2.0),
                });
                self.scene.map_relations.push(MapRelation::Signals {
                    from: "t1".into(),
                    to: "c0".into(),
                });
            }
        }
    }

    fn neighbor_relations(&mut self) {
        // adjacent lanes of the same direction, ordered from the center outwards
        for dir in [Dir::Forward, Dir::Backward] {
            let mut idx: Vec<usize> = (0..self.lanes.len()).filter(|&j| self.lanes[j].dir == dir).collect();
            idx.sort_by(|&a, &b| self.lanes[a].offset.abs().total_cmp(&self.lanes[b].offset.abs()));
            for w in idx.windows(2) {
                // the outer lane is to the right of the inner one for both directions
                let (inner, outer) = (w[0], w[1]);
                for (from, to, kind) in [
                    (outer, inner, ConnectionKind::LeftNeighbor),
                    (inner, outer, ConnectionKind::RightNeighbor),
                ] {
                    self.scene.map_relations.push(MapRelation::Connection {
                        from: lane_id(from),
                        to: lane_id(to),
                        kind,
                    });
                }
            }
        }
    }

    fn red_light(&self, lane: usize) -> bool {
        self.lanes[lane]
            .light
            .is_some_and(|l| self.lights[l].state == LightState::Red)
    }

    /// Forward car lanes with a queue at the stop line.
    fn controlled(&self, lane: usize) -> bool {
        let info = &self.lanes[lane];
        info.dir == Dir::Forward && !info.parking && (self.stop_sign || self.red_light(lane))
    }

    fn add_agent(&mut self, k: usize) {
        if self.lanes.is_empty() {
            return;
        }
        let cfg = self.cfg;
        if self.rng.gen_bool(cfg.pedestrian_prob) {
            self.add_pedestrian(k);
            return;
        }
        let parked = self.rng.gen_bool(cfg.parked_fraction);
        let (lane, s, lateral, motion) = if parked {
            self.place_parked()
        } else {
            self.place_traffic()
        };
        self.push_vehicle(k, lane, s, lateral, motion);
    }

    /// Lane, station, lateral fraction of the half width, motion.
    fn place_parked(&mut self) -> (usize, f64, f64, Motion) {
        let s = self.parking_station();
        let parking: Vec<usize> = (0..self.lanes.len()).filter(|&j| self.lanes[j].parking).collect();
        if !parking.is_empty() && self.rng.gen_bool(0.6) {
            let lat = self.rng.gen_range(-0.3..0.3);
            return (parking[0], s, lat, Motion::Stationary);
        }
        // curb side of the outermost car lane of either direction
        let outer = |dir: Dir, lanes: &[LaneInfo]| {
            (0..lanes.len())
                .filter(|&j| lanes[j].dir == dir && !lanes[j].parking)
                .max_by(|&a, &b| lanes[a].offset.abs().total_cmp(&lanes[b].offset.abs()))
        };
        let dir = if self.rng.gen_bool(0.7) { Dir::Forward } else { Dir::Backward };
        let lane = outer(dir, &self.lanes).or_else(|| outer(Dir::Forward, &self.lanes)).unwrap();
        let lat = -self.rng.gen_range(0.75..0.95);
        (lane, s, lat, Motion::Stationary)
    }

    /// Uniform station outside the no-parking zone around the stop line.
    fn parking_station(&mut self) -> f64 {
        let len = self.corridor.length;
        let before = (self.stop_s - 12.0 - 4.0).max(0.0);
        let after = (len - 4.0 - (self.stop_s + 10.0)).max(0.0);
        let u = self.rng.gen_range(0.0..before + after);
        if u < before {
            4.0 + u
        } else {
            self.stop_s + 10.0 + (u - before)
        }
    }

    fn place_traffic(&mut self) -> (usize, f64, f64, Motion) {
        let len = self.corridor.length;
        let car: Vec<usize> = (0..self.lanes.len()).filter(|&j| !self.lanes[j].parking).collect();
        let lane = *car.choose(self.rng).unwrap();
        let queue = self.controlled(lane) && self.rng.gen_bool(0.9);
        if queue {
            let q = self.queue_len[lane];
            self.queue_len[lane] += 1;
            let s = (self.stop_s - 2.5 - q as f64 * self.rng.gen_range(6.5..9.0)).max(3.0);
            let motion = if self.rng.gen_bool(0.7) {
                Motion::Stationary
            } else {
                Motion::Stopped {
                    ago: self.rng.gen_range(0.3..2.0),
                    decel: self.rng.gen_range(1.5..3.5),
                }
            };
            // queued vehicles hug the curb as often as they sit centered
            let lat = if self.red_light(lane) && self.rng.gen_bool(0.45) {
                -self.rng.gen_range(0.75..0.95)
            } else {
                self.rng.gen_range(-0.3..0.3)
            };
            return (lane, s, lat, motion);
        }
        let s = self.rng.gen_range(4.0..len - 4.0);
        let u: f64 = self.rng.gen();
        if u < 0.12 {
            // stalled in the travel lane
            return (lane, s, self.rng.gen_range(-0.35..0.35), Motion::Stationary);
        }
        if u < 0.3 {
            let m = Motion::Stopped {
                ago: self.rng.gen_range(0.3..2.5),
                decel: self.rng.gen_range(1.5..3.5),
            };
            return (lane, s, self.rng.gen_range(-0.35..0.35), m);
        }
        let speed = self.rng.gen_range(2.0..14.0);
        (lane, s, self.rng.gen_range(-0.4..0.4), Motion::Moving { speed })
    }

    fn lane_frame(&self, lane: usize, s: f64, lateral: f64) -> (Point, f64, f64) {
        let info = &self.lanes[lane];
        let half = info.width / 2.0;
        // lateral fractions are measured to the right of the travel direction
        // when negative
        let (offset, heading) = match info.dir {
            Dir::Forward => (info.offset + lateral * half, self.corridor.heading(s)),
            Dir::Backward => (info.offset - lateral * half, self.corridor.heading(s) + PI),
        };
        (self.corridor.pose(s, offset), heading, half)
    }

    fn push_vehicle(&mut self, k: usize, lane: usize, s: f64, lateral: f64, motion: Motion) {
        let cfg = self.cfg;
        let (pos, heading, _) = self.lane_frame(lane, s, lateral);
        let yaw_noise = if motion == Motion::Stationary { 0.08 } else { 0.03 };
        let yaw = heading + self.gauss(yaw_noise);
        let agent_type = match self.rng.gen_range(0..10) {
            0 => AgentType::Truck,
            1 => AgentType::TwoWheeler,
            _ => AgentType::Car,
        };
        let ghost_kind = self.rng.gen_bool(cfg.ghost.rate).then(|| self.rng.gen_range(0..3u8));
        let (motion, yaw) = match ghost_kind {
            Some(0) => (
                Motion::Moving {
                    speed: self.rng.gen_range(3.0..12.0),
                },
                heading + PI + self.gauss(0.03),
            ),
            _ => (motion, yaw),
        };
        let mut agent = self.kinematic_agent(k, pos, yaw, motion, agent_type);
        self.apply_evidence(&mut agent, ghost_kind);

        let parked = if ghost_kind.is_some() || agent_type == AgentType::Pedestrian {
            None
        } else {
            Some(self.parked_rule(lane, pos, motion))
        };
        let ghost = ghost_kind.is_some();
        self.push_labels(&agent.id, parked, ghost);
        self.scene.agents.push(agent);
    }

    fn parked_rule(&self, lane: usize, pos: Point, motion: Motion) -> bool {
        let rule = &self.cfg.parked;
        if motion.max_speed() >= rule.max_speed {
            return false;
        }
        if rule.red_light_exempt && self.red_light(lane) {
            return false;
        }
        let rec = &self.records[lane];
        let line = Polyline::new(&rec.centerline, &rec.widths).expect("generated lanes are valid");
        let f = line.project(pos);
        rec.lane_type == LaneType::Parking || f.d.abs() > rule.offset_fraction * f.width / 2.0
    }

    fn push_labels(&mut self, id: &str, parked: Option<bool>, ghost: bool) {
        let noise = self.cfg.label_noise;
        let parked = parked.map(|p| p ^ self.rng.gen_bool(noise));
        let ghost = ghost ^ self.rng.gen_bool(noise);
        self.scene.labels.insert(
            id.to_string(),
            AgentLabels {
                parked,
                ghost: Some(ghost),
            },
        );
    }

    fn add_pedestrian(&mut self, k: usize) {
        let speed = self.rng.gen_range(0.8..1.7);
        let (pos, yaw) = if self.has_crosswalk {
            let s = self.stop_s + self.rng.gen_range(1.5..3.5);
            let (lo, hi) = self.road_edges();
            let off = self.rng.gen_range(lo..hi);
            let dir = if self.rng.gen_bool(0.5) { FRAC_PI_2 } else { -FRAC_PI_2 };
            (self.corridor.pose(s, off), self.corridor.heading(s) + dir)
        } else {
            let s = self.rng.gen_range(5.0..self.corridor.length - 5.0);
            let (lo, _) = self.road_edges();
            let dir = if self.rng.gen_bool(0.5) { 0.0 } else { PI };
            (self.corridor.pose(s, lo - 1.5), self.corridor.heading(s) + dir)
        };
        let ghost_kind = self.rng.gen_bool(self.cfg.ghost.rate).then(|| self.rng.gen_range(1..3u8));
        let mut agent = self.kinematic_agent(k, pos, yaw, Motion::Moving { speed }, AgentType::Pedestrian);
        self.apply_evidence(&mut agent, ghost_kind);
        self.push_labels(&agent.id, None, ghost_kind.is_some());
        self.scene.agents.push(agent);
    }

    fn road_edges(&self) -> (f64, f64) {
        let lo = self.lanes.iter().map(|l| l.offset - l.width / 2.0).fold(0.0, f64::min);
        let hi = self.lanes.iter().map(|l| l.offset + l.width / 2.0).fold(0.0, f64::max);
        (lo, hi)
    }

    fn kinematic_agent(&mut self, k: usize, pos: Point, yaw: f64, motion: Motion, agent_type: AgentType) -> AgentRecord {
        let cfg = self.cfg;
        let dir = [yaw.cos(), yaw.sin()];
        let (_, v_now) = motion.back(0.0);
        let accel = match motion {
            Motion::Stopped { ago, decel } if ago < STEP_SECONDS => -decel,
            _ => 0.0,
        };
        let mut trajectory = Vec::with_capacity(TRAJECTORY_STEPS);
        for t in 0..TRAJECTORY_STEPS {
            let tau = (TRAJECTORY_STEPS - t) as f64 * STEP_SECONDS;
            let (back, _) = motion.back(tau);
            let world = [-dir[0] * back, -dir[1] * back];
            let local = rotate(world, -yaw);
            trajectory.push(TrajectoryStep {
                dx: local[0] + self.gauss(cfg.position_noise),
                dy: local[1] + self.gauss(cfg.position_noise),
                dyaw: self.gauss(0.01),
                valid: true,
            });
        }
        let (length, width) = match agent_type {
            AgentType::Car => (self.rng.gen_range(4.0..5.0), self.rng.gen_range(1.7..2.0)),
            AgentType::Truck => (self.rng.gen_range(6.0..12.0), self.rng.gen_range(2.3..2.6)),
            AgentType::TwoWheeler => (self.rng.gen_range(1.6..2.2), self.rng.gen_range(0.6..0.9)),
            AgentType::Pedestrian => (self.rng.gen_range(0.4..0.7), self.rng.gen_range(0.4..0.7)),
        };
        let vn = cfg.velocity_noise;
        let u = |rng: &mut Rng, lo: f64, hi: f64| rng.gen_range(lo..hi);
        AgentRecord {
            id: format!("a{k}"),
            position: [pos[0] + self.gauss(cfg.position_noise), pos[1] + self.gauss(cfg.position_noise)],
            velocity: [dir[0] * v_now + self.gauss(vn), dir[1] * v_now + self.gauss(vn)],
            acceleration: [dir[0] * accel + self.gauss(0.1), dir[1] * accel + self.gauss(0.1)],
            yaw,
            yaw_rate: self.gauss(0.02),
            variance: StateVariance {
                position: [u(self.rng, 0.01, 0.3), u(self.rng, 0.01, 0.3)],
                velocity: [u(self.rng, 0.01, 0.2), u(self.rng, 0.01, 0.2)],
                acceleration: [u(self.rng, 0.05, 0.5), u(self.rng, 0.05, 0.5)],
                yaw: u(self.rng, 0.001, 0.05),
                yaw_rate: u(self.rng, 0.001, 0.05),
            },
            max_velocity: motion.max_speed() + self.gauss(vn).abs(),
            tracked_time: u(self.rng, 3.0, 20.0),
            length,
            width,
            agent_type,
            sensors: [SensorReading {
                detection: 0.0,
                existence: 0.0,
            }; SENSORS],
            existence_confidence: 0.0,
            trajectory,
        }
    }

    /// Sensor readings and history validity; ghost kinds 1 and 2 plant weak
    /// existence evidence and long validity gaps respectively.
    fn apply_evidence(&mut self, agent: &mut AgentRecord, ghost_kind: Option<u8>) {
        let rule = self.cfg.ghost.clone();
        let weak = ghost_kind == Some(1);
        let dropout = (!weak && self.rng.gen_bool(0.3)).then(|| self.rng.gen_range(0..SENSORS));
        for (i, s) in agent.sensors.iter_mut().enumerate() {
            s.existence = if weak || dropout == Some(i) {
                self.rng.gen_range(0.02..rule.existence_below)
            } else {
                self.rng.gen_range(0.45..1.0)
            };
            s.detection = self.rng.gen_range(0.3..1.0);
        }
        agent.existence_confidence = agent.sensors.iter().map(|s| s.existence).sum::<f64>() / SENSORS as f64;
        let gap = if ghost_kind == Some(2) {
            self.rng.gen_range(rule.max_gap_fraction + 0.05..0.9)
        } else {
            self.rng.gen_range(0.0..0.3)
        };
        let n_invalid = (gap * TRAJECTORY_STEPS as f64).round() as usize;
        let mut steps: Vec<usize> = (0..TRAJECTORY_STEPS).collect();
        steps.shuffle(self.rng);
        for &t in &steps[..n_invalid] {
            agent.trajectory[t].valid = false;
        }
    }

    fn finish(self) -> Result<SceneDescription> {
        let mut scene = self.scene;
        scene.lanes = self.records;
        scene.lights = self.lights;
        Ok(scene)
    }
}

/// Train / validation / test shares of the dataset.
pub const SPLIT: [f64; 3] = [0.6, 0.3, 0.1];

/// Shuffles `0..n` with the dataset seed and cuts it into the three splits;
/// each split is returned in ascending order.
pub fn split_indices(n: usize, seed: u64) -> [Vec<usize>; 3] {
    let mut rng = Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = (SPLIT[0] * n as f64).round() as usize;
    let n_val = ((SPLIT[1] * n as f64).round() as usize).min(n - n_train);
    let mut sets = [
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
        idx[n_train + n_val..].to_vec(),
    ];
    for s in &mut sets {
        s.sort_unstable();
    }
    sets
}
