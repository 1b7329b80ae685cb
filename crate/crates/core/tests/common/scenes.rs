//! Hand-built scenes shared by the scene and encoder tests.

use std::f64::consts::PI;

use hetscene::scene::*;

pub fn agent(id: &str, position: [f64; 2], velocity: [f64; 2], yaw: f64) -> AgentRecord {
    AgentRecord {
        id: id.into(),
        position,
        velocity,
        acceleration: [0.1, -0.2],
        yaw,
        yaw_rate: 0.05,
        variance: StateVariance {
            position: [0.1, 0.2],
            velocity: [0.3, 0.3],
            acceleration: [0.5, 0.5],
            yaw: 0.01,
            yaw_rate: 0.02,
        },
        max_velocity: 12.0,
        tracked_time: 3.5,
        length: 4.5,
        width: 1.8,
        agent_type: AgentType::Car,
        sensors: [SensorReading {
            detection: 0.9,
            existence: 0.8,
        }; SENSORS],
        existence_confidence: 0.95,
        trajectory: (0..TRAJECTORY_STEPS)
            .map(|t| TrajectoryStep {
                dx: -((30 - t) as f64) * 0.1,
                dy: 0.0,
                dyaw: 0.0,
                valid: t % 3 != 0,
            })
            .collect(),
    }
}

pub fn lane(id: &str, centerline: Vec<[f64; 2]>, width: f64) -> LaneRecord {
    let n = centerline.len();
    LaneRecord {
        id: id.into(),
        centerline,
        widths: vec![width; n],
        lane_type: LaneType::Car,
        speed_limit: 13.9,
        left_boundary: BoundaryType::Dashed,
        right_boundary: BoundaryType::Solid,
        turn: TurnType::Straight,
    }
}

pub fn scene(agents: Vec<AgentRecord>, lanes: Vec<LaneRecord>) -> SceneDescription {
    SceneDescription {
        agents,
        lanes,
        ..Default::default()
    }
}

pub fn rich_scene() -> SceneDescription {
    let agents = vec![
        agent("a0", [1.0, 0.2], [4.0, 0.0], 0.0),
        agent("a1", [6.0, 3.6], [0.0, 0.0], 0.1),
        agent("a2", [12.0, 1.0], [-3.0, 0.0], PI),
        agent("a3", [5.0, 5.0], [0.0, 1.2], PI / 2.0),
        agent("a4", [40.0, 40.0], [0.0, 0.0], 0.0),
    ];
    let lanes = vec![
        lane("l0", vec![[0.0, 0.0], [20.0, 0.0]], 3.5),
        lane("l1", vec![[0.0, 3.5], [20.0, 3.5]], 3.5),
        lane("l2", vec![[5.0, -10.0], [5.0, 10.0]], 3.0),
    ];
    let crosswalks = vec![CrosswalkRecord {
        id: "c0".into(),
        polygon: vec![[3.5, -2.0], [6.5, -2.0], [6.5, 6.0], [3.5, 6.0]],
        signaled: true,
    }];
    let stops = vec![StopRecord {
        id: "s0".into(),
        kind: StopKind::Stop,
        position: [3.0, 0.0],
    }];
    let lights = vec![LightRecord {
        id: "t0".into(),
        kind: LightKind::Car,
        state: LightState::Red,
        deactivatable: false,
        position: [3.0, -2.0],
    }];
    let map_relations = vec![
        MapRelation::Connection {
            from: "l0".into(),
            to: "l1".into(),
            kind: ConnectionKind::LeftNeighbor,
        },
        MapRelation::Connection {
            from: "l1".into(),
            to: "l0".into(),
            kind: ConnectionKind::RightNeighbor,
        },
        MapRelation::Conflict {
            from: "l0".into(),
            to: "l2".into(),
            kind: ConflictKind::Cross,
        },
        MapRelation::Precedence {
            from: "l2".into(),
            to: "l0".into(),
            kind: PrecedenceKind::Lower,
        },
        MapRelation::Overlaps {
            from: "c0".into(),
            to: "l0".into(),
        },
        MapRelation::Controls {
            from: "t0".into(),
            to: "l0".into(),
        },
        MapRelation::Signals {
            from: "t0".into(),
            to: "c0".into(),
        },
        MapRelation::Stops {
            from: "s0".into(),
            to: "l0".into(),
            station: 3.0,
        },
    ];
    let mut labels = std::collections::BTreeMap::new();
    labels.insert(
        "a1".to_string(),
        AgentLabels {
            parked: Some(true),
            ghost: Some(false),
        },
    );
    labels.insert(
        "a3".to_string(),
        AgentLabels {
            parked: None,
            ghost: Some(true),
        },
    );
    SceneDescription {
        agents,
        lanes,
        crosswalks,
        stops,
        lights,
        map_relations,
        labels,
    }
}
