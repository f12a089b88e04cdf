//! Search feedback derived from a scenario recording.

use serde::{Deserialize, Serialize};

use crate::runner::{min_ego_distance, Frame, Outcome, ScenarioRecording, Verdict};
use crate::geometry::normalize_angle;
use crate::scenario::EgoMission;
use crate::sim::{VehicleParams, WorldState, MAX_STEERING};

/// Fitness reported when the ego never shares the road with anything.
pub const NO_OBSTACLE_FITNESS: f64 = 1e9;
pub const HISTOGRAM_BINS: usize = 8;
pub const BEHAVIOR_LEN: usize = 3 * HISTOGRAM_BINS;

pub const SPEED_RANGE: (f64, f64) = (0.0, 30.0);
pub const ACCEL_RANGE: (f64, f64) = (-6.0, 6.0);
pub const HEADING_RATE_RANGE: (f64, f64) = (-1.0, 1.0);
/// Distance beyond which the closeness component is 0.
pub const CLOSENESS_HORIZON: f64 = 10.0;
/// Heading rates below this speed are not scored.
pub const YAW_SCORING_MIN_SPEED: f64 = 0.5;
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    /// Minimum ego-to-obstacle separation over the trace (m).
    pub fitness: f64,
    pub behavior_vector: Vec<f64>,
    pub quality_score: f64,
    pub verdict: Verdict,
}

/// Bin index for `v` over `[lo, hi)` split into [`HISTOGRAM_BINS`] bins;
/// out-of-range values land in the end bins.
pub fn bin_index(v: f64, (lo, hi): (f64, f64)) -> usize {
    let v = if v.abs() < SNAP { 0.0 } else { v };
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let raw = ((v - lo) / width).floor();
    if raw.is_nan() || raw < 0.0 {
        0
    } else {
        (raw as usize).min(HISTOGRAM_BINS - 1)
    }
}

fn histogram(values: impl Iterator<Item = f64>, range: (f64, f64)) -> [f64; HISTOGRAM_BINS] {
    let mut h = [0.0; HISTOGRAM_BINS];
    for v in values {
        h[bin_index(v, range)] += 1.0;
    }
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|x| *x /= total);
    }
    h
}

/// Per-step `(speed at step start, longitudinal accel, heading rate)` of the ego.
fn ego_rates(frames: &[Frame], dt: f64) -> Vec<(f64, f64, f64)> {
    frames
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].ego()?, w[1].ego()?);
            let accel = (b.speed - a.speed) / dt;
            let yaw = normalize_angle(b.pose.heading - a.pose.heading) / dt;
            Some((a.speed, accel, yaw))
        })
        .collect()
}

/// Speed, acceleration and heading-rate histograms of the ego, each
/// normalized to unit mass, concatenated into 24 values.
pub fn extract_behavior(rec: &ScenarioRecording) -> Vec<f64> {
    let rates = ego_rates(&rec.frames, rec.dt);
    let speeds = histogram(rec.frames.iter().filter_map(|f| f.ego()).map(|e| e.speed), SPEED_RANGE);
    let accels = histogram(rates.iter().map(|r| r.1), ACCEL_RANGE);
    let yaws = histogram(rates.iter().map(|r| r.2), HEADING_RATE_RANGE);
    speeds.iter().chain(&accels).chain(&yaws).copied().collect()
}

/// Minimum ego-to-other separation over all frames.
pub fn min_distance(rec: &ScenarioRecording) -> f64 {
    rec.frames
        .iter()
        .filter_map(|f| {
            let world = WorldState {
                sim_time: f.sim_time,
                actors: f.actors.clone(),
            };
            min_ego_distance(&world).map(|h| h.distance)
        })
        .fold(NO_OBSTACLE_FITNESS, f64::min)
}

/// Search fitness: the minimum separation, pinned to 0 on a collision
/// verdict so that every collision ranks equally.
pub fn fitness(rec: &ScenarioRecording) -> f64 {
    if rec.verdict.outcome == Outcome::CollisionViolation {
        0.0
    } else {
        min_distance(rec)
    }
}

/// Severity components, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityParts {
    pub closeness: f64,
    pub accel: f64,
    pub yaw: f64,
    pub deviation: f64,
}

impl QualityParts {
    pub fn score(&self) -> f64 {
        (self.closeness + self.accel + self.yaw + self.deviation) / 4.0
    }
}

pub fn quality_parts(rec: &ScenarioRecording, mission: &EgoMission, params: &VehicleParams) -> QualityParts {
    let closeness = 1.0 - fitness(rec).min(CLOSENESS_HORIZON) / CLOSENESS_HORIZON;
    let rates = ego_rates(&rec.frames, rec.dt);
    let accel = rates.iter().map(|r| r.1.abs()).fold(0.0, f64::max) / params.max_accel;
    let yaw = rates
        .iter()
        .filter(|r| r.0 >= YAW_SCORING_MIN_SPEED)
        .map(|r| r.2.abs() / (r.0 * MAX_STEERING.tan() / params.wheelbase))
        .fold(0.0, f64::max);
    let egos: Vec<_> = rec.frames.iter().filter_map(|f| f.ego()).collect();
    let off = egos
        .iter()
        .filter(|e| {
            let p = mission.route.stitched.project(e.pose.position());
            p.lateral.abs() > mission.route.lane_width_at(p.s) / 2.0
        })
        .count();
    let deviation = if egos.is_empty() { 0.0 } else { off as f64 / egos.len() as f64 };
    QualityParts {
        closeness,
        accel: accel.min(1.0),
        yaw: yaw.min(1.0),
        deviation,
    }
}

pub fn quality_score(rec: &ScenarioRecording, mission: &EgoMission, params: &VehicleParams) -> f64 {
    quality_parts(rec, mission, params).score()
}

pub fn feedback_from(rec: &ScenarioRecording, mission: &EgoMission, params: &VehicleParams) -> Feedback {
    Feedback {
        fitness: fitness(rec),
        behavior_vector: extract_behavior(rec),
        quality_score: quality_score(rec, mission, params),
        verdict: rec.verdict.clone(),
    }
}
