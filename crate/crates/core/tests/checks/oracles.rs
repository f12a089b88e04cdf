//! Independent reference computations used to judge the implementation.

use std::collections::BTreeMap;
use std::path::Path;

use scenofuzz_core::map::LaneMap;
use scenofuzz_core::runner::{OracleConfig, Outcome, ScenarioRecording, VerdictDetails};
use scenofuzz_core::sim::{ActorKind, ActorState};

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.3) * (v - 0.3)).sum()
}

/// Least-squares circle through the points (algebraic fit).
pub fn fit_circle_radius(points: &[(f64, f64)]) -> f64 {
    // x^2 + y^2 + D x + E y + F = 0, solved through the normal equations
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for &(x, y) in points {
        let row = [x, y, 1.0];
        let z = -(x * x + y * y);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * z;
        }
    }
    let [d, e, f] = solve3(m, rhs);
    ((d * d + e * e) / 4.0 - f).sqrt()
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let k = m[row][col] / m[col][col];
            for c in col..3 {
                m[row][c] -= k * m[col][c];
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| m[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

fn frame_of(a: &ActorState) -> ((f64, f64), (f64, f64), (f64, f64), f64, f64) {
    let (s, c) = a.pose.heading.sin_cos();
    ((a.pose.x, a.pose.y), (c, s), (-s, c), a.body.length / 2.0, a.body.width / 2.0)
}

/// Points along the rectangle outline no further than `h` apart, corners included.
fn outline(a: &ActorState, h: f64) -> Vec<(f64, f64)> {
    let ((cx, cy), u, v, hl, hw) = frame_of(a);
    let corner = |su: f64, sv: f64| (cx + su * hl * u.0 + sv * hw * v.0, cy + su * hl * u.1 + sv * hw * v.1);
    let corners = [corner(1.0, 1.0), corner(-1.0, 1.0), corner(-1.0, -1.0), corner(1.0, -1.0)];
    let mut out = Vec::new();
    for i in 0..4 {
        let (p, q) = (corners[i], corners[(i + 1) % 4]);
        let len = (q.0 - p.0).hypot(q.1 - p.1);
        let n = (len / h).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    out
}

/// Distance from a point to a filled rectangle, 0 inside.
fn point_to_box(p: (f64, f64), b: &ActorState) -> f64 {
    let ((cx, cy), u, v, hl, hw) = frame_of(b);
    let (dx, dy) = (p.0 - cx, p.1 - cy);
    let along = (dx * u.0 + dy * u.1).abs() - hl;
    let across = (dx * v.0 + dy * v.1).abs() - hw;
    along.max(0.0).hypot(across.max(0.0))
}

/// Separation of two footprints from boundary samples spaced at most `h`;
/// overestimates the true value by at most `h / 2`.
pub fn sampled_separation(a: &ActorState, b: &ActorState, h: f64) -> f64 {
    let one = |x: &ActorState, y: &ActorState| outline(x, h).into_iter().map(|p| point_to_box(p, y)).fold(f64::INFINITY, f64::min);
    one(a, b).min(one(b, a))
}

fn nearest_to_ego(actors: &[ActorState], h: f64) -> Option<(String, f64)> {
    let ego = actors.iter().find(|a| a.kind == ActorKind::Ego)?;
    actors
        .iter()
        .filter(|a| a.kind != ActorKind::Ego)
        .map(|a| (a.actor_id.clone(), sampled_separation(ego, a, h)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

const COARSE: f64 = 1e-2;
const FINE: f64 = 1e-4;
pub const ARRIVAL_SPEED: f64 = 0.5;

/// Re-derives the verdict of a recording from its frames and the map.
pub fn verify_recording(rec: &ScenarioRecording, map: &LaneMap, oracle: &OracleConfig) -> Result<(), String> {
    let last = rec.frames.last().ok_or("recording has no frames")?;
    if (last.sim_time - rec.verdict.time_of_decision).abs() > 1e-9 {
        return Err(format!(
            "last frame at {} but decision at {}",
            last.sim_time, rec.verdict.time_of_decision
        ));
    }
    if rec.frames.iter().any(|f| f.sim_time > rec.verdict.time_of_decision + 1e-9) {
        return Err("frames after the decision".into());
    }
    let end = map.lane(&rec.config_snapshot.ego.end_lane).map_err(|e| e.to_string())?;
    let goal = end.centerline.sample(rec.config_snapshot.ego.end_station).0;
    let arrived = |f: &scenofuzz_core::runner::Frame| {
        let ego = f.actors.iter().find(|a| a.kind == ActorKind::Ego).expect("ego present");
        ((ego.pose.x - goal.x).hypot(ego.pose.y - goal.y), ego.speed)
    };
    let earlier = &rec.frames[..rec.frames.len() - 1];
    for f in earlier {
        if let Some((id, d)) = nearest_to_ego(&f.actors, COARSE) {
            if d <= oracle.collision_threshold {
                return Err(format!("missed collision with {id} at t={} ({d:.4} m)", f.sim_time));
            }
        }
        let (d, v) = arrived(f);
        // small slack keeps this one-sided against rounding in the position
        if d < oracle.destination_tolerance - 1e-6 && v < ARRIVAL_SPEED - 1e-9 {
            return Err(format!("missed arrival at t={} ({d:.3} m, {v:.3} m/s)", f.sim_time));
        }
    }
    match (&rec.verdict.outcome, &rec.verdict.details) {
        (Outcome::CollisionViolation, VerdictDetails::Collision { other, .. }) => {
            let ego = last.actors.iter().find(|a| a.kind == ActorKind::Ego).ok_or("no ego")?;
            let o = last.actors.iter().find(|a| &a.actor_id == other).ok_or("collision partner missing")?;
            let d = sampled_separation(ego, o, FINE);
            if d > oracle.collision_threshold + FINE / 2.0 {
                return Err(format!("collision with {other} recomputes to {d:.5} m"));
            }
        }
        (Outcome::DestinationReached, VerdictDetails::Destination { .. }) => {
            if let Some((id, d)) = nearest_to_ego(&last.actors, COARSE) {
                if d <= oracle.collision_threshold {
                    return Err(format!("arrival reported while touching {id}"));
                }
            }
            let (d, v) = arrived(last);
            if !(d <= oracle.destination_tolerance + 1e-6 && v < ARRIVAL_SPEED) {
                return Err(format!("arrival recomputes to {d:.3} m at {v:.3} m/s"));
            }
        }
        (Outcome::Timeout, VerdictDetails::Timeout { duration_limit }) => {
            if last.sim_time < duration_limit - 1e-9 {
                return Err(format!("timeout at {} before limit {duration_limit}", last.sim_time));
            }
        }
        (Outcome::Stuck, VerdictDetails::Stuck { .. }) | (Outcome::AgentTimeout, _) => {}
        (o, d) => return Err(format!("verdict {o:?} with details {d:?}")),
    }
    Ok(())
}

/// File name to contents for every file in `dir`.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(Result::ok)
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default()
}
