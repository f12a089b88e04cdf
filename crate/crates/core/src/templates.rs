//! Scenario templates: the bundled junction fixtures and automatic NPC
//! placement for campaigns that only name a map and an ego mission.

use crate::geometry::{Polyline, Vec2};
use crate::map::{sample_polyline, LaneMap, MapError, Route};
use crate::scenario::{EgoMission, EgoSpec, NpcKind, NpcSpec, ScenarioConfig, SCHEMA_VERSION};
use crate::sim::BodyDims;

/// Spacing between generated NPC waypoints (meters).
pub const WAYPOINT_SPACING: f64 = 20.0;
pub const DEFAULT_NPC_SPEED: f64 = 8.0;
pub const DEFAULT_DURATION: f64 = 60.0;

pub const BUNDLED_TEMPLATES: &[&str] = &["junction", "left_turn"];

/// Cuts `route` to the arc-length window `[from, to]`.
fn trim(route: &Route, from: f64, to: f64) -> Polyline {
    let line = &route.stitched;
    let mut pts = vec![line.sample(from).0];
    for (p, &s) in line.points().iter().zip(line.cumulative()) {
        if s > from + 1e-6 && s < to - 1e-6 {
            pts.push(*p);
        }
    }
    pts.push(line.sample(to).0);
    Polyline::new(pts).expect("window spans two points")
}

/// An NPC driving `lanes` from `start_station` on the first lane to
/// `end_station` on the last, with one waypoint every [`WAYPOINT_SPACING`].
pub fn npc_along_lanes(
    map: &LaneMap,
    actor_id: &str,
    lanes: &[&str],
    start_station: f64,
    end_station: f64,
    speed: f64,
) -> Result<NpcSpec, MapError> {
    let seq: Vec<String> = lanes.iter().map(|s| s.to_string()).collect();
    for l in &seq {
        map.lane(l)?;
    }
    let route = map.stitch(seq);
    let from = route.station_to_s(0, start_station);
    let to = route.station_to_s(route.lane_sequence.len() - 1, end_station);
    let waypoints = sample_polyline(&trim(&route, from, to), WAYPOINT_SPACING).expect("positive spacing");
    let target_speeds = vec![speed; waypoints.len() - 1];
    Ok(NpcSpec {
        actor_id: actor_id.to_string(),
        kind: NpcKind::Vehicle,
        waypoints,
        target_speeds,
        spawn_delay: 0.0,
        body: BodyDims::CAR,
    })
}

fn base(id: &str, map: &LaneMap, ego: EgoSpec) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        scenario_id: id.to_string(),
        map_name: map.name.clone(),
        ego,
        npc_vehicles: Vec::new(),
        static_obstacles: Vec::new(),
        duration_limit: 40.0,
    }
}

/// Bundled template by name; all of them live on `borregas_ave_lite`.
pub fn bundled_template(name: &str, map: &LaneMap) -> Option<ScenarioConfig> {
    let built = match name {
        "junction" => junction(map),
        "left_turn" => left_turn(map),
        _ => return None,
    };
    built.ok()
}

/// Ego crosses the junction eastbound while three vehicles cross its path.
fn junction(map: &LaneMap) -> Result<ScenarioConfig, MapError> {
    let ego = EgoSpec {
        start_lane: "lane_31".into(),
        start_station: 60.0,
        end_lane: "lane_16".into(),
        end_station: 40.0,
        body: BodyDims::CAR,
    };
    let mut cfg = base("junction", map, ego);
    cfg.npc_vehicles = vec![
        npc_along_lanes(map, "npc_1", &["lane_33", "lane_j33_15", "lane_15"], 50.0, 50.0, DEFAULT_NPC_SPEED)?,
        npc_along_lanes(map, "npc_2", &["lane_34", "lane_j34_17", "lane_17"], 50.0, 50.0, DEFAULT_NPC_SPEED)?,
        npc_along_lanes(map, "npc_3", &["lane_32", "lane_j32_17", "lane_17"], 40.0, 40.0, DEFAULT_NPC_SPEED)?,
    ];
    Ok(cfg)
}

/// Ego turns left across oncoming traffic.
fn left_turn(map: &LaneMap) -> Result<ScenarioConfig, MapError> {
    let ego = EgoSpec {
        start_lane: "lane_31".into(),
        start_station: 60.0,
        end_lane: "lane_15".into(),
        end_station: 40.0,
        body: BodyDims::CAR,
    };
    let mut cfg = base("left_turn", map, ego);
    cfg.npc_vehicles = vec![
        npc_along_lanes(map, "npc_1", &["lane_32", "lane_j32_18", "lane_18"], 50.0, 50.0, DEFAULT_NPC_SPEED)?,
        npc_along_lanes(map, "npc_2", &["lane_33", "lane_j33_15", "lane_15"], 50.0, 20.0, DEFAULT_NPC_SPEED)?,
        npc_along_lanes(map, "npc_3", &["lane_34", "lane_j34_17", "lane_17"], 50.0, 50.0, DEFAULT_NPC_SPEED)?,
    ];
    Ok(cfg)
}

fn segments_cross(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn polylines_cross(a: &Polyline, b: &Polyline) -> bool {
    a.points().windows(2).any(|sa| {
        b.points()
            .windows(2)
            .any(|sb| segments_cross(sa[0], sa[1], sb[0], sb[1]))
    })
}

/// Follows successor links from `lane`, preferring paths that cross `avoid`.
fn npc_path(map: &LaneMap, lane: &str, ego: &Polyline) -> Vec<String> {
    let mut best: Option<Vec<String>> = None;
    let mut stack = vec![vec![lane.to_string()]];
    while let Some(path) = stack.pop() {
        let last = map.lane(path.last().expect("non-empty")).expect("known lane");
        if last.successors.is_empty() || path.len() >= 6 {
            let crosses = polylines_cross(&map.stitch(path.clone()).stitched, ego);
            if crosses {
                return path;
            }
            if best.is_none() {
                best = Some(path);
            }
            continue;
        }
        for s in last.successors.iter().rev() {
            if !path.contains(s) {
                let mut p = path.clone();
                p.push(s.clone());
                stack.push(p);
            }
        }
    }
    best.unwrap_or_else(|| vec![lane.to_string()])
}

/// Builds a template for `ego` with up to `npc_count` NPCs spawned on entry
/// lanes (lanes without predecessors), conflicting paths first.
pub fn auto_template(map: &LaneMap, ego: EgoSpec, npc_count: usize, duration: f64) -> Result<ScenarioConfig, MapError> {
    let mission = EgoMission::resolve(&ego, map)?;
    let mut cfg = base("auto", map, ego.clone());
    cfg.duration_limit = duration;
    let ego_line = trim(&mission.route, mission.start_s, mission.goal_s);

    let mut crossing = Vec::new();
    let mut other = Vec::new();
    for lane in map.lanes() {
        if !lane.predecessors.is_empty() || lane.lane_id == ego.start_lane {
            continue;
        }
        let path = npc_path(map, &lane.lane_id, &ego_line);
        let line = map.stitch(path.clone()).stitched;
        if polylines_cross(&line, &ego_line) {
            crossing.push(path);
        } else {
            other.push(path);
        }
    }
    for path in crossing.into_iter().chain(other).take(npc_count) {
        let first = map.lane(&path[0])?;
        let last = map.lane(path.last().expect("non-empty"))?;
        let start = ego.start_station.min(first.length() * 0.5);
        let end = last.length() * 0.5;
        let id = format!("npc_{}", cfg.npc_vehicles.len() + 1);
        let lanes: Vec<&str> = path.iter().map(String::as_str).collect();
        let npc = npc_along_lanes(map, &id, &lanes, start, end, DEFAULT_NPC_SPEED)?;
        cfg.npc_vehicles.push(npc);
    }
    Ok(cfg)
}
