//! Declarative scenario descriptions, their JSON form, and the bounded
//! numeric encoding the search algorithms operate on.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::geometry::{Pose, Vec2};
use crate::map::{LaneMap, MapError, Route};
use crate::sim::{obb_distance, ActorKind, ActorState, BodyDims};

pub const SCHEMA_VERSION: u32 = 1;
pub const EGO_ID: &str = "ego";
/// Upper limit for any scripted target speed (m/s).
pub const NPC_MAX_SPEED: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario_id: String,
    pub map_name: String,
    pub ego: EgoSpec,
    #[serde(default)]
    pub npc_vehicles: Vec<NpcSpec>,
    #[serde(default)]
    pub static_obstacles: Vec<ObstacleSpec>,
    pub duration_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub start_lane: String,
    #[serde(default)]
    pub start_station: f64,
    pub end_lane: String,
    pub end_station: f64,
    #[serde(default)]
    pub body: BodyDims,
}

/// Reserved actor kind tag; only vehicles are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NpcKind {
    #[default]
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpcSpec {
    pub actor_id: String,
    #[serde(default)]
    pub kind: NpcKind,
    pub waypoints: Vec<Pose>,
    /// One target speed per waypoint segment.
    pub target_speeds: Vec<f64>,
    #[serde(default)]
    pub spawn_delay: f64,
    #[serde(default)]
    pub body: BodyDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub actor_id: String,
    pub pose: Pose,
    #[serde(default)]
    pub body: BodyDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    UnsupportedSchemaVersion { found: u32 },
    DuplicateActorId { actor_id: String },
    NonPositiveDuration { value: f64 },
    MapMismatch { expected: String, found: String },
    UnknownLane { lane_id: String },
    StationOutOfRange { lane_id: String, station: f64, length: f64 },
    NoEgoRoute { from: String, to: String },
    DestinationBehindStart,
    TooFewWaypoints { actor_id: String },
    SpeedCountMismatch { actor_id: String, expected: usize, found: usize },
    SpeedOutOfRange { actor_id: String, segment: usize, value: f64 },
    NegativeSpawnDelay { actor_id: String },
    InvalidBody { actor_id: String },
    NonFinite { actor_id: String },
    InitialOverlap { first: String, second: String },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::UnsupportedSchemaVersion { .. } => "unsupported_schema_version",
            Violation::DuplicateActorId { .. } => "duplicate_actor_id",
            Violation::NonPositiveDuration { .. } => "non_positive_duration",
            Violation::MapMismatch { .. } => "map_mismatch",
            Violation::UnknownLane { .. } => "unknown_lane",
            Violation::StationOutOfRange { .. } => "station_out_of_range",
            Violation::NoEgoRoute { .. } => "no_ego_route",
            Violation::DestinationBehindStart => "destination_behind_start",
            Violation::TooFewWaypoints { .. } => "too_few_waypoints",
            Violation::SpeedCountMismatch { .. } => "speed_count_mismatch",
            Violation::SpeedOutOfRange { .. } => "speed_out_of_range",
            Violation::NegativeSpawnDelay { .. } => "negative_spawn_delay",
            Violation::InvalidBody { .. } => "invalid_body",
            Violation::NonFinite { .. } => "non_finite",
            Violation::InitialOverlap { .. } => "initial_overlap",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let detail = serde_json::to_string(self).unwrap_or_default();
        write!(f, "{}: {detail}", self.code())
    }
}

/// The ego's route and its start/goal positions along it.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoMission {
    pub route: Route,
    pub start_s: f64,
    pub goal_s: f64,
    pub start_pose: Pose,
    pub goal: Vec2,
}

impl EgoMission {
    pub fn resolve(ego: &EgoSpec, map: &LaneMap) -> Result<Self, MapError> {
        let route = map.route(&ego.start_lane, &ego.end_lane)?;
        let start_s = route.station_to_s(0, ego.start_station);
        let goal_s = route.station_to_s(route.lane_sequence.len() - 1, ego.end_station);
        let start_pose = route.stitched.pose_at(start_s);
        let goal = route.stitched.sample(goal_s).0;
        Ok(EgoMission {
            route,
            start_s,
            goal_s,
            start_pose,
            goal,
        })
    }
}

impl ScenarioConfig {
    /// Initial states of every actor: ego first, then NPCs, then obstacles.
    pub fn initial_actors(&self, mission: &EgoMission) -> Vec<ActorState> {
        let mut out = Vec::with_capacity(1 + self.npc_vehicles.len() + self.static_obstacles.len());
        out.push(ActorState::new(EGO_ID, ActorKind::Ego, mission.start_pose, self.ego.body));
        for npc in &self.npc_vehicles {
            let start = npc.waypoints.first().copied().unwrap_or_default();
            let heading = match npc.waypoints.get(1) {
                Some(next) => (next.position() - start.position()).angle(),
                None => start.heading,
            };
            out.push(ActorState::new(
                npc.actor_id.clone(),
                ActorKind::Npc,
                Pose::new(start.x, start.y, heading),
                npc.body,
            ));
        }
        for obs in &self.static_obstacles {
            out.push(ActorState::new(obs.actor_id.clone(), ActorKind::Static, obs.pose, obs.body));
        }
        out
    }

    pub fn actor_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(EGO_ID)
            .chain(self.npc_vehicles.iter().map(|n| n.actor_id.as_str()))
            .chain(self.static_obstacles.iter().map(|o| o.actor_id.as_str()))
    }
}

fn pose_finite(p: &Pose) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.heading.is_finite()
}

/// Lists every reason `config` cannot be executed on `map`, in a fixed order.
pub fn validate(config: &ScenarioConfig, map: &LaneMap) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.schema_version != SCHEMA_VERSION {
        out.push(Violation::UnsupportedSchemaVersion {
            found: config.schema_version,
        });
    }
    if config.map_name != map.name {
        out.push(Violation::MapMismatch {
            expected: map.name.clone(),
            found: config.map_name.clone(),
        });
    }
    if !(config.duration_limit.is_finite() && config.duration_limit > 0.0) {
        out.push(Violation::NonPositiveDuration {
            value: config.duration_limit,
        });
    }

    let mut seen = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for id in config.actor_ids() {
        if !seen.insert(id) && reported.insert(id) {
            out.push(Violation::DuplicateActorId { actor_id: id.to_string() });
        }
    }

    let ego = &config.ego;
    let mut lanes_ok = true;
    for (lane_id, station) in [(&ego.start_lane, ego.start_station), (&ego.end_lane, ego.end_station)] {
        match map.lane(lane_id) {
            Err(_) => {
                lanes_ok = false;
                out.push(Violation::UnknownLane { lane_id: lane_id.clone() });
            }
            Ok(lane) => {
                if !(station.is_finite() && (0.0..=lane.length()).contains(&station)) {
                    lanes_ok = false;
                    out.push(Violation::StationOutOfRange {
                        lane_id: lane_id.clone(),
                        station,
                        length: lane.length(),
                    });
                }
            }
        }
    }
    if !ego.body.is_valid() {
        out.push(Violation::InvalidBody { actor_id: EGO_ID.into() });
    }
    let mission = if lanes_ok {
        match EgoMission::resolve(ego, map) {
            Ok(m) => {
                if m.goal_s <= m.start_s {
                    out.push(Violation::DestinationBehindStart);
                }
                Some(m)
            }
            Err(_) => {
                out.push(Violation::NoEgoRoute {
                    from: ego.start_lane.clone(),
                    to: ego.end_lane.clone(),
                });
                None
            }
        }
    } else {
        None
    };

    let mut geometry_ok = true;
    for npc in &config.npc_vehicles {
        let id = &npc.actor_id;
        if npc.waypoints.len() < 2 {
            geometry_ok = false;
            out.push(Violation::TooFewWaypoints { actor_id: id.clone() });
        }
        if !npc.waypoints.iter().all(pose_finite) {
            geometry_ok = false;
            out.push(Violation::NonFinite { actor_id: id.clone() });
        }
        let segments = npc.waypoints.len().saturating_sub(1);
        if npc.target_speeds.len() != segments {
            out.push(Violation::SpeedCountMismatch {
                actor_id: id.clone(),
                expected: segments,
                found: npc.target_speeds.len(),
            });
        }
        for (segment, &value) in npc.target_speeds.iter().enumerate() {
            if !(value.is_finite() && (0.0..=NPC_MAX_SPEED).contains(&value)) {
                out.push(Violation::SpeedOutOfRange {
                    actor_id: id.clone(),
                    segment,
                    value,
                });
            }
        }
        if !(npc.spawn_delay.is_finite() && npc.spawn_delay >= 0.0) {
            out.push(Violation::NegativeSpawnDelay { actor_id: id.clone() });
        }
        if !npc.body.is_valid() {
            geometry_ok = false;
            out.push(Violation::InvalidBody { actor_id: id.clone() });
        }
    }
    for obs in &config.static_obstacles {
        if !obs.body.is_valid() {
            geometry_ok = false;
            out.push(Violation::InvalidBody {
                actor_id: obs.actor_id.clone(),
            });
        }
        if !pose_finite(&obs.pose) {
            geometry_ok = false;
            out.push(Violation::NonFinite {
                actor_id: obs.actor_id.clone(),
            });
        }
    }

    if let (Some(mission), true, true) = (mission, geometry_ok, ego.body.is_valid()) {
        let actors = config.initial_actors(&mission);
        for i in 0..actors.len() {
            for j in i + 1..actors.len() {
                if obb_distance(&actors[i], &actors[j]) <= 0.0 {
                    out.push(Violation::InitialOverlap {
                        first: actors[i].actor_id.clone(),
                        second: actors[j].actor_id.clone(),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
#[error("scenario schema violation at {pointer}: {message}")]
pub struct SchemaError {
    /// JSON pointer to the offending field.
    pub pointer: String,
    pub message: String,
}

pub fn to_json(config: &ScenarioConfig) -> String {
    canonical::to_string(config).expect("scenario serializes")
}

pub fn from_json(text: &str) -> Result<ScenarioConfig, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        SchemaError {
            pointer: canonical::json_pointer(e.path(), &message),
            message,
        }
    })?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(SchemaError {
            pointer: "/schema_version".into(),
            message: format!("expected {SCHEMA_VERSION}, found {}", config.schema_version),
        });
    }
    Ok(config)
}

/// Closed interval for one gene, serialized as `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl From<[f64; 2]> for Bounds {
    fn from(v: [f64; 2]) -> Self {
        Bounds { low: v[0], high: v[1] }
    }
}

impl From<Bounds> for [f64; 2] {
    fn from(b: Bounds) -> Self {
        [b.low, b.high]
    }
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Bounds { low, high }
    }

    pub fn range(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    /// Clamps into the interval; NaN maps to `low`.
    pub fn clamp(&self, v: f64) -> f64 {
        if v.is_nan() {
            self.low
        } else {
            v.clamp(self.low, self.high)
        }
    }
}

/// Which scenario fields the search may change, and within what bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpace {
    /// Lateral shift of each NPC waypoint, meters, left positive.
    pub waypoint_offset: Option<Bounds>,
    /// Target speed of each NPC waypoint segment, m/s.
    pub segment_speed: Option<Bounds>,
    /// NPC spawn delay, seconds.
    pub spawn_delay: Option<Bounds>,
}

impl Default for MutationSpace {
    fn default() -> Self {
        MutationSpace {
            waypoint_offset: Some(Bounds::new(-2.0, 2.0)),
            segment_speed: Some(Bounds::new(0.0, 20.0)),
            spawn_delay: Some(Bounds::new(0.0, 10.0)),
        }
    }
}

impl MutationSpace {
    pub fn empty() -> Self {
        MutationSpace {
            waypoint_offset: None,
            segment_speed: None,
            spawn_delay: None,
        }
    }
}

/// One coordinate of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "gene", rename_all = "snake_case")]
pub enum Gene {
    WaypointOffset { npc: String, waypoint: usize },
    SegmentSpeed { npc: String, segment: usize },
    SpawnDelay { npc: String },
}

impl Gene {
    pub fn group(&self) -> GeneGroup {
        match self {
            Gene::WaypointOffset { .. } => GeneGroup::Offsets,
            Gene::SegmentSpeed { .. } => GeneGroup::Speeds,
            Gene::SpawnDelay { .. } => GeneGroup::Delays,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneGroup {
    Speeds,
    Offsets,
    Delays,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub bounds: Vec<Bounds>,
    pub layout: Vec<Gene>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        self.values.len() == self.bounds.len()
            && self.values.len() == self.layout.len()
            && self.values.iter().zip(&self.bounds).all(|(v, b)| b.contains(*v))
    }

    /// Same layout and bounds, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        ParameterVector {
            values,
            bounds: self.bounds.clone(),
            layout: self.layout.clone(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlattenError {
    #[error("scenario references lane {0} absent from the map")]
    UnknownLane(String),
    #[error("scenario is for map {found}, not {expected}")]
    MapMismatch { expected: String, found: String },
    #[error("gene {gene:?} value {value} lies outside its bounds")]
    OutOfBounds { gene: Gene, value: f64 },
}

/// Encodes the mutable fields of `config` as a bounded vector.
///
/// Offsets are relative to `config` itself, so they flatten to zero; the
/// flattened config is the template every later vector is decoded against.
pub fn flatten(config: &ScenarioConfig, map: &LaneMap, space: &MutationSpace) -> Result<ParameterVector, FlattenError> {
    if config.map_name != map.name {
        return Err(FlattenError::MapMismatch {
            expected: map.name.clone(),
            found: config.map_name.clone(),
        });
    }
    for lane in [&config.ego.start_lane, &config.ego.end_lane] {
        map.lane(lane).map_err(|_| FlattenError::UnknownLane(lane.clone()))?;
    }
    let mut values = Vec::new();
    let mut bounds = Vec::new();
    let mut layout = Vec::new();
    let mut push = |gene: Gene, value: f64, b: Bounds| -> Result<(), FlattenError> {
        if !b.contains(value) {
            return Err(FlattenError::OutOfBounds { gene, value });
        }
        values.push(value);
        bounds.push(b);
        layout.push(gene);
        Ok(())
    };
    for npc in &config.npc_vehicles {
        if let Some(b) = space.waypoint_offset {
            for waypoint in 0..npc.waypoints.len() {
                push(
                    Gene::WaypointOffset {
                        npc: npc.actor_id.clone(),
                        waypoint,
                    },
                    0.0,
                    b,
                )?;
            }
        }
        if let Some(b) = space.segment_speed {
            for (segment, &v) in npc.target_speeds.iter().enumerate() {
                push(
                    Gene::SegmentSpeed {
                        npc: npc.actor_id.clone(),
                        segment,
                    },
                    v,
                    b,
                )?;
            }
        }
        if let Some(b) = space.spawn_delay {
            push(Gene::SpawnDelay { npc: npc.actor_id.clone() }, npc.spawn_delay, b)?;
        }
    }
    Ok(ParameterVector { values, bounds, layout })
}

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("vector has {values} values, {bounds} bounds and {layout} genes")]
    LengthMismatch { values: usize, bounds: usize, layout: usize },
    #[error("gene {0:?} does not exist in the template")]
    MissingTarget(Gene),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub config: ScenarioConfig,
    /// Indices of genes that were clamped into their bounds.
    pub repaired: Vec<usize>,
}

impl Decoded {
    pub fn was_repaired(&self) -> bool {
        !self.repaired.is_empty()
    }
}

/// Writes the vector's values into a copy of `template`, clamping
/// out-of-bounds genes.
pub fn unflatten(vector: &ParameterVector, template: &ScenarioConfig) -> Result<Decoded, LayoutError> {
    let n = vector.values.len();
    if vector.bounds.len() != n || vector.layout.len() != n {
        return Err(LayoutError::LengthMismatch {
            values: n,
            bounds: vector.bounds.len(),
            layout: vector.layout.len(),
        });
    }
    let mut config = template.clone();
    let mut repaired = Vec::new();
    for (i, gene) in vector.layout.iter().enumerate() {
        let raw = vector.values[i];
        let b = vector.bounds[i];
        let value = b.clamp(raw);
        if value.to_bits() != raw.to_bits() {
            repaired.push(i);
        }
        let npc_name = match gene {
            Gene::WaypointOffset { npc, .. } | Gene::SegmentSpeed { npc, .. } | Gene::SpawnDelay { npc } => npc,
        };
        let Some(npc_idx) = template.npc_vehicles.iter().position(|n| &n.actor_id == npc_name) else {
            return Err(LayoutError::MissingTarget(gene.clone()));
        };
        let base = &template.npc_vehicles[npc_idx];
        let npc = &mut config.npc_vehicles[npc_idx];
        match gene {
            Gene::WaypointOffset { waypoint, .. } => {
                let Some(p) = base.waypoints.get(*waypoint) else {
                    return Err(LayoutError::MissingTarget(gene.clone()));
                };
                let normal = Vec2::from_angle(p.heading).perp();
                npc.waypoints[*waypoint] = Pose {
                    x: p.x + normal.x * value,
                    y: p.y + normal.y * value,
                    heading: p.heading,
                };
            }
            Gene::SegmentSpeed { segment, .. } => {
                if *segment >= base.target_speeds.len() {
                    return Err(LayoutError::MissingTarget(gene.clone()));
                }
                npc.target_speeds[*segment] = value;
            }
            Gene::SpawnDelay { .. } => npc.spawn_delay = value,
        }
    }
    Ok(Decoded { config, repaired })
}
