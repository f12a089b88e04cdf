//! Plan-view geometry shared by the map, the simulator and the oracles.
//!
//! Everything is expressed in the map frame: meters, y-up, headings in
//! radians measured counter-clockwise from +x and normalized into (-π, π].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A 2D point or vector. Serialized as a `[x, y]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2 { x: c, y: s }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Left-hand normal (rotated +90°).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; guard the open lower bound anyway
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Closest-point query result against a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Arc length of the foot point from the polyline start.
    pub s: f64,
    /// Signed distance, positive to the left of the direction of travel.
    pub lateral: f64,
    /// Unsigned distance to the foot point.
    pub distance: f64,
    pub segment: usize,
    pub foot: Vec2,
}

/// An open polyline with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline; returns `None` with fewer than two points.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Some(Polyline { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("polyline has >= 2 points")
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the segment containing arc length `s`; a vertex belongs to the
    /// segment that starts there, except the final vertex.
    pub fn segment_at(&self, s: f64) -> usize {
        let last = self.segment_count() - 1;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).expect("finite arc length"))
        {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    pub fn segment_heading(&self, seg: usize) -> f64 {
        (self.points[seg + 1] - self.points[seg]).angle()
    }

    /// Point and tangent heading at arc length `s` (clamped to the polyline).
    pub fn sample(&self, s: f64) -> (Vec2, f64) {
        let s = s.clamp(0.0, self.length());
        let seg = self.segment_at(s);
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = if seg_len > 0.0 {
            ((s - self.cumulative[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (a.lerp(b, t), (b - a).angle())
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        let (p, h) = self.sample(s);
        Pose::new(p.x, p.y, h)
    }

    /// Nearest point on the polyline. Ties keep the earliest segment.
    pub fn project(&self, p: Vec2) -> PolylineProjection {
        let mut best: Option<PolylineProjection> = None;
        for seg in 0..self.segment_count() {
            let a = self.points[seg];
            let b = self.points[seg + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 {
                ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let foot = a + ab * t;
            let distance = p.distance(foot);
            if best.map_or(true, |b| distance < b.distance) {
                let seg_len = len2.sqrt();
                let side = ab.cross(p - a);
                let lateral = if side >= 0.0 { distance } else { -distance };
                best = Some(PolylineProjection {
                    s: self.cumulative[seg] + t * seg_len,
                    lateral,
                    distance,
                    segment: seg,
                    foot,
                });
            }
        }
        best.expect("polyline has >= 1 segment")
    }
}

/// An oriented rectangle: `length` along the heading, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(pose: &Pose, length: f64, width: f64) -> Self {
        Obb {
            center: pose.position(),
            heading: pose.heading,
            half_length: length / 2.0,
            half_width: width / 2.0,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.heading);
        [u, u.perp()]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let l = u * self.half_length;
        let w = v * self.half_width;
        [
            self.center + l + w,
            self.center - l + w,
            self.center - l - w,
            self.center + l - w,
        ]
    }

    fn projection_radius(&self, axis: Vec2) -> f64 {
        let [u, v] = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }

    /// Separating-axis test; touching boxes count as intersecting.
    pub fn intersects(&self, other: &Obb) -> bool {
        let d = other.center - self.center;
        self.axes()
            .into_iter()
            .chain(other.axes())
            .all(|axis| d.dot(axis).abs() <= self.projection_radius(axis) + other.projection_radius(axis))
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Euclidean separation of two oriented rectangles, 0 when they touch or overlap.
///
/// For disjoint convex polygons the closest pair always involves a vertex of
/// one of them, so the vertex-to-edge minimum in both directions is exact.
pub fn obb_separation(a: &Obb, b: &Obb) -> f64 {
    if a.intersects(b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for (verts, edges) in [(&ca, &cb), (&cb, &ca)] {
        for &p in verts.iter() {
            for i in 0..4 {
                best = best.min(point_segment_distance(p, edges[i], edges[(i + 1) % 4]));
            }
        }
    }
    best
}
