//! Lane-level maps: loading, routing over successor links, and projection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Polyline, Pose, Vec2};

/// Consecutive centerline points closer than this are rejected.
pub const MIN_POINT_SPACING: f64 = 1e-3;
/// Lane ends closer than this are treated as the same point when stitching.
const STITCH_TOLERANCE: f64 = 1e-3;
/// Route lengths within this are considered equal for tie-breaking.
const LENGTH_TIE: f64 = 1e-9;

const BUNDLED: &[(&str, &str)] = &[
    ("borregas_ave_lite", include_str!("../maps/borregas_ave_lite.map.json")),
    ("chain3", include_str!("../maps/chain3.map.json")),
    ("diamond", include_str!("../maps/diamond.map.json")),
];

/// Names accepted for bundled maps, e.g. the full map a reduced one stands in for.
const ALIASES: &[(&str, &str)] = &[("borregas_ave", "borregas_ave_lite")];

#[derive(Debug, Error)]
pub enum MapError {
    #[error("cannot read map {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed map document: {0}")]
    Malformed(String),
    #[error("lane {lane} references missing lane {reference}")]
    DanglingReference { lane: String, reference: String },
    #[error("lane {0} is defined more than once")]
    DuplicateLane(String),
    #[error("lane {lane} has invalid geometry: {reason}")]
    InvalidGeometry { lane: String, reason: String },
    #[error("map has no lanes")]
    Empty,
    #[error("unknown lane {0}")]
    UnknownLane(String),
    #[error("no route from {from} to {to}")]
    NoPath { from: String, to: String },
    #[error("unknown map {0}; not bundled and no such file")]
    UnknownMap(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    name: String,
    lanes: Vec<LaneDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneDoc {
    id: String,
    width: f64,
    centerline: Vec<Vec2>,
    #[serde(default)]
    successors: Vec<String>,
    #[serde(default)]
    predecessors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub lane_id: String,
    pub centerline: Polyline,
    pub width: f64,
    pub successors: Vec<String>,
    pub predecessors: Vec<String>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }
}

/// An immutable lane graph. Lanes are kept ordered by id, which gives every
/// query a lexicographic tie-break for free.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneMap {
    pub name: String,
    lanes: BTreeMap<String, Lane>,
}

/// Nearest-lane projection of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneProjection {
    pub lane_id: String,
    pub s: f64,
    pub lateral_offset: f64,
}

impl LaneMap {
    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let doc: MapDoc = serde_json::from_str(text).map_err(|e| MapError::Malformed(e.to_string()))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: MapDoc) -> Result<Self, MapError> {
        let mut lanes = BTreeMap::new();
        for l in doc.lanes {
            if !(l.width.is_finite() && l.width > 0.0) {
                return Err(MapError::InvalidGeometry {
                    lane: l.id,
                    reason: format!("width {} must be positive", l.width),
                });
            }
            if l.centerline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(MapError::InvalidGeometry {
                    lane: l.id,
                    reason: "non-finite coordinate".into(),
                });
            }
            if let Some(i) = l
                .centerline
                .windows(2)
                .position(|w| w[0].distance(w[1]) <= MIN_POINT_SPACING)
            {
                return Err(MapError::InvalidGeometry {
                    lane: l.id,
                    reason: format!("centerline points {i} and {} coincide", i + 1),
                });
            }
            let Some(centerline) = Polyline::new(l.centerline) else {
                return Err(MapError::InvalidGeometry {
                    lane: l.id,
                    reason: "centerline needs at least 2 points".into(),
                });
            };
            let lane = Lane {
                lane_id: l.id.clone(),
                centerline,
                width: l.width,
                successors: l.successors,
                predecessors: l.predecessors,
            };
            if lanes.insert(l.id.clone(), lane).is_some() {
                return Err(MapError::DuplicateLane(l.id));
            }
        }
        if lanes.is_empty() {
            return Err(MapError::Empty);
        }
        for lane in lanes.values() {
            for r in lane.successors.iter().chain(&lane.predecessors) {
                if !lanes.contains_key(r) {
                    return Err(MapError::DanglingReference {
                        lane: lane.lane_id.clone(),
                        reference: r.clone(),
                    });
                }
            }
        }
        Ok(LaneMap { name: doc.name, lanes })
    }

    pub fn to_json(&self) -> String {
        let doc = MapDoc {
            name: self.name.clone(),
            lanes: self
                .lanes
                .values()
                .map(|l| LaneDoc {
                    id: l.lane_id.clone(),
                    width: l.width,
                    centerline: l.centerline.points().to_vec(),
                    successors: l.successors.clone(),
                    predecessors: l.predecessors.clone(),
                })
                .collect(),
        };
        crate::canonical::to_string(&doc).expect("map document serializes")
    }

    pub fn lane(&self, id: &str) -> Result<&Lane, MapError> {
        self.lanes.get(id).ok_or_else(|| MapError::UnknownLane(id.to_string()))
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    /// Projects `point` onto the nearest lane centerline.
    pub fn project(&self, point: Vec2) -> LaneProjection {
        let mut best: Option<(f64, LaneProjection)> = None;
        for lane in self.lanes.values() {
            let p = lane.centerline.project(point);
            if best.as_ref().map_or(true, |(d, _)| p.distance < *d) {
                best = Some((
                    p.distance,
                    LaneProjection {
                        lane_id: lane.lane_id.clone(),
                        s: p.s,
                        lateral_offset: p.lateral,
                    },
                ));
            }
        }
        best.expect("map is non-empty").1
    }

    /// Shortest lane sequence from `start` to `end` by stitched arc length.
    pub fn route(&self, start: &str, end: &str) -> Result<Route, MapError> {
        let start_lane = self.lane(start)?;
        self.lane(end)?;

        #[derive(PartialEq)]
        struct Entry {
            cost: f64,
            path: Vec<String>,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            // min-heap on (cost, path)
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .cost
                    .total_cmp(&self.cost)
                    .then_with(|| other.path.cmp(&self.path))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let better = |cost: f64, path: &Vec<String>, cur: &(f64, Vec<String>)| {
            cost < cur.0 - LENGTH_TIE || ((cost - cur.0).abs() <= LENGTH_TIE && *path < cur.1)
        };

        let mut labels: BTreeMap<&str, (f64, Vec<String>)> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        let first = (start_lane.length(), vec![start.to_string()]);
        labels.insert(start, first.clone());
        heap.push(Entry {
            cost: first.0,
            path: first.1,
        });

        while let Some(Entry { cost, path }) = heap.pop() {
            let node = path.last().expect("non-empty path").as_str();
            match labels.get(node) {
                Some(label) if label.1 == path => {}
                _ => continue,
            }
            if node == end {
                continue;
            }
            let lane = &self.lanes[node];
            let tail = *lane.centerline.points().last().expect("lane has points");
            for succ in &lane.successors {
                let next = &self.lanes[succ];
                if path.iter().any(|p| p == succ) {
                    continue;
                }
                let c = cost + joined_length(tail, next.centerline.points());
                let mut p = path.clone();
                p.push(succ.clone());
                let improve = labels.get(succ.as_str()).map_or(true, |cur| better(c, &p, cur));
                if improve {
                    labels.insert(succ.as_str(), (c, p.clone()));
                    heap.push(Entry { cost: c, path: p });
                }
            }
        }

        let (_, lanes) = labels.get(end).cloned().ok_or_else(|| MapError::NoPath {
            from: start.to_string(),
            to: end.to_string(),
        })?;
        Ok(self.stitch(lanes))
    }

    /// Joins the centerlines of an already-connected lane sequence.
    pub fn stitch(&self, lane_sequence: Vec<String>) -> Route {
        let mut points: Vec<Vec2> = Vec::new();
        let mut lane_starts = Vec::with_capacity(lane_sequence.len());
        let mut acc = 0.0;
        for id in &lane_sequence {
            let pts = self.lanes[id].centerline.points();
            match points.last().copied() {
                None => {
                    lane_starts.push(0.0);
                    points.extend_from_slice(pts);
                    acc = self.lanes[id].length();
                }
                Some(tail) => {
                    let skip = tail.distance(pts[0]) <= STITCH_TOLERANCE;
                    let start_s = if skip { acc } else { acc + tail.distance(pts[0]) };
                    lane_starts.push(start_s);
                    acc += joined_length(tail, pts);
                    points.extend_from_slice(if skip { &pts[1..] } else { pts });
                }
            }
        }
        let widths = lane_sequence.iter().map(|id| self.lanes[id].width).collect();
        let stitched = Polyline::new(points).expect("lanes have >= 2 points");
        Route {
            total_length: stitched.length(),
            lane_sequence,
            stitched,
            lane_starts,
            lane_widths: widths,
        }
    }
}

/// Added arc length when appending `pts` after `tail`.
fn joined_length(tail: Vec2, pts: &[Vec2]) -> f64 {
    let own: f64 = pts.windows(2).map(|w| w[0].distance(w[1])).sum();
    if tail.distance(pts[0]) <= STITCH_TOLERANCE {
        own - pts[0].distance(pts[1]) + tail.distance(pts[1])
    } else {
        own + tail.distance(pts[0])
    }
}

/// A lane sequence with its stitched centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub lane_sequence: Vec<String>,
    pub stitched: Polyline,
    pub total_length: f64,
    /// Arc length along `stitched` at which each lane of the sequence begins.
    pub lane_starts: Vec<f64>,
    pub lane_widths: Vec<f64>,
}

impl Route {
    /// Index into `lane_sequence` of the lane covering arc length `s`.
    pub fn lane_index_at(&self, s: f64) -> usize {
        self.lane_starts.iter().rposition(|&start| start <= s).unwrap_or(0)
    }

    pub fn lane_width_at(&self, s: f64) -> f64 {
        self.lane_widths[self.lane_index_at(s)]
    }

    /// Arc length on the route of station `station` measured along lane `index`.
    pub fn station_to_s(&self, index: usize, station: f64) -> f64 {
        (self.lane_starts[index] + station).min(self.total_length)
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("sampling spacing must be positive, got {0}")]
pub struct InvalidSpacing(pub f64);

/// Poses every `spacing` meters along the route, always ending at the route end.
pub fn sample_route(route: &Route, spacing: f64) -> Result<Vec<Pose>, InvalidSpacing> {
    sample_polyline(&route.stitched, spacing)
}

pub fn sample_polyline(line: &Polyline, spacing: f64) -> Result<Vec<Pose>, InvalidSpacing> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(InvalidSpacing(spacing));
    }
    let total = line.length();
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let s = k as f64 * spacing;
        if s >= total - 1e-9 {
            break;
        }
        out.push(line.pose_at(s));
        k += 1;
    }
    out.push(line.pose_at(total));
    Ok(out)
}

pub fn load_map(path: &Path) -> Result<LaneMap, MapError> {
    let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LaneMap::from_json(&text)
}

pub fn bundled_map_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Loads a bundled map by name or alias.
pub fn bundled_map(name: &str) -> Option<LaneMap> {
    let name = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, n)| *n);
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| LaneMap::from_json(text).expect("bundled maps are valid"))
}

/// Resolves a map by bundled name, then `<dir>/<name>.map.json`, then a literal path.
pub fn resolve_map(name: &str, search_dir: Option<&Path>) -> Result<LaneMap, MapError> {
    if let Some(m) = bundled_map(name) {
        return Ok(m);
    }
    if let Some(dir) = search_dir {
        let candidate = dir.join(format!("{name}.map.json"));
        if candidate.exists() {
            return load_map(&candidate);
        }
    }
    let p = Path::new(name);
    if p.exists() {
        return load_map(p);
    }
    Err(MapError::UnknownMap(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn chain() -> LaneMap {
        bundled_map("chain3").unwrap()
    }

    #[test]
    fn alias_resolves_to_bundled() {
        assert_eq!(bundled_map("borregas_ave").unwrap().name, "borregas_ave_lite");
    }

    #[test]
    fn minimal_single_lane() {
        let m = LaneMap::from_json(
            r#"{"name":"m","lanes":[{"id":"a","width":3.5,"centerline":[[0,0],[10,0]],"successors":[],"predecessors":[]}]}"#,
        )
        .unwrap();
        assert_eq!(m.len(), 1);
        assert!(m.lane("a").unwrap().length() > 0.0);
    }

    #[test]
    fn dangling_successor_named() {
        let err = LaneMap::from_json(
            r#"{"name":"m","lanes":[{"id":"a","width":3.5,"centerline":[[0,0],[10,0]],"successors":["lane_X"],"predecessors":[]}]}"#,
        )
        .unwrap_err();
        match err {
            MapError::DanglingReference { lane, reference } => {
                assert_eq!(lane, "a");
                assert_eq!(reference, "lane_X");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn geometry_rejections() {
        let bad_width = r#"{"name":"m","lanes":[{"id":"a","width":0,"centerline":[[0,0],[10,0]]}]}"#;
        assert!(matches!(LaneMap::from_json(bad_width), Err(MapError::InvalidGeometry { .. })));
        let one_pt = r#"{"name":"m","lanes":[{"id":"a","width":3,"centerline":[[0,0]]}]}"#;
        assert!(matches!(LaneMap::from_json(one_pt), Err(MapError::InvalidGeometry { .. })));
        let dup_pt = r#"{"name":"m","lanes":[{"id":"a","width":3,"centerline":[[0,0],[0,0.0005],[5,0]]}]}"#;
        assert!(matches!(LaneMap::from_json(dup_pt), Err(MapError::InvalidGeometry { .. })));
        assert!(matches!(LaneMap::from_json("{"), Err(MapError::Malformed(_))));
        assert!(matches!(LaneMap::from_json(r#"{"name":"m","lanes":[]}"#), Err(MapError::Empty)));
    }

    #[test]
    fn missing_file() {
        let err = load_map(Path::new("/nonexistent/x.map.json")).unwrap_err();
        assert!(matches!(err, MapError::Io { .. }));
    }

    #[test]
    fn route_identity_and_chain() {
        let m = chain();
        assert_eq!(m.route("lane_a", "lane_a").unwrap().lane_sequence, ["lane_a"]);
        let r = m.route("lane_a", "lane_c").unwrap();
        assert_eq!(r.lane_sequence, ["lane_a", "lane_b", "lane_c"]);
        assert!((r.total_length - 160.0).abs() < 1e-9);
        assert_eq!(r.lane_starts, vec![0.0, 50.0, 100.0]);
    }

    #[test]
    fn route_errors() {
        let m = chain();
        assert!(matches!(m.route("lane_c", "lane_a"), Err(MapError::NoPath { .. })));
        assert!(matches!(m.route("nope", "lane_a"), Err(MapError::UnknownLane(_))));
    }

    #[test]
    fn diamond_tie_breaks_lexicographically() {
        let m = bundled_map("diamond").unwrap();
        let b1 = m.lane("lane_b1").unwrap().length();
        let b2 = m.lane("lane_b2").unwrap().length();
        assert!((b1 - b2).abs() < 1e-12);
        let r = m.route("lane_a", "lane_c").unwrap();
        assert_eq!(r.lane_sequence, ["lane_a", "lane_b1", "lane_c"]);
    }

    #[test]
    fn project_on_vertex_and_left() {
        let m = chain();
        let p = m.project(Vec2::new(50.0, 0.0));
        assert!(p.lateral_offset.abs() < 1e-9);
        // lane_a ends and lane_b starts at x=50; lane_a wins lexicographically
        assert_eq!(p.lane_id, "lane_a");
        let p = m.project(Vec2::new(20.0, 1.5));
        assert_eq!(p.lane_id, "lane_a");
        assert!((p.lateral_offset - 1.5).abs() < 1e-6);
        assert!((p.s - 20.0).abs() < 1e-9);
    }

    #[test]
    fn sample_route_spacing() {
        let m = LaneMap::from_json(
            r#"{"name":"m","lanes":[{"id":"a","width":3.5,"centerline":[[0,0],[10,0]]}]}"#,
        )
        .unwrap();
        let r = m.route("a", "a").unwrap();
        let poses = sample_route(&r, 5.0).unwrap();
        let xs: Vec<f64> = poses.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 5.0, 10.0]);
        assert!(poses.iter().all(|p| p.heading == 0.0));
        assert_eq!(sample_route(&r, 50.0).unwrap().len(), 2);
        assert_eq!(sample_route(&r, 0.0), Err(InvalidSpacing(0.0)));
        assert!(sample_route(&r, -1.0).is_err());
    }

    #[test]
    fn quarter_circle_headings() {
        let n = 400;
        let radius = 20.0;
        let pts: Vec<String> = (0..=n)
            .map(|i| {
                let a = -PI / 2.0 + (PI / 2.0) * i as f64 / n as f64;
                format!("[{},{}]", radius * a.cos(), radius + radius * a.sin())
            })
            .collect();
        let doc = format!(
            r#"{{"name":"arc","lanes":[{{"id":"q","width":3.5,"centerline":[{}]}}]}}"#,
            pts.join(",")
        );
        let m = LaneMap::from_json(&doc).unwrap();
        let r = m.route("q", "q").unwrap();
        let poses = sample_route(&r, 1.0).unwrap();
        // closed form: heading(s) = s / radius for a counter-clockwise arc from heading 0
        for (k, w) in poses.windows(2).enumerate().take(poses.len() - 2) {
            let dh = w[1].heading - w[0].heading;
            assert!((dh - 1.0 / radius).abs() < 5e-3, "step {k}: {dh}");
            let expected = k as f64 / radius;
            assert!((w[0].heading - expected).abs() < 5e-3);
        }
    }

    #[test]
    fn bundled_maps_load() {
        for name in bundled_map_names() {
            assert!(bundled_map(name).is_some(), "{name}");
        }
        let m = bundled_map("borregas_ave_lite").unwrap();
        let r = m.route("lane_31", "lane_15").unwrap();
        assert_eq!(r.lane_sequence, ["lane_31", "lane_j31_15", "lane_15"]);
    }
}
