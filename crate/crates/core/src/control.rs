//! Path tracking controllers: pure-pursuit steering and PID speed tracking.
//! Shared by the scripted NPC policy and the reference ego agent.

use crate::geometry::{normalize_angle, Polyline, PolylineProjection, Pose, Vec2};
use crate::scenario::NpcSpec;
use crate::sim::{ActorState, ControlCommand, VehicleParams, MAX_STEERING};

pub const MIN_LOOKAHEAD: f64 = 3.0;
pub const LOOKAHEAD_GAIN: f64 = 1.5;

pub const SPEED_KP: f64 = 0.8;
pub const SPEED_KI: f64 = 0.05;
pub const SPEED_KD: f64 = 0.0;
pub const INTEGRAL_LIMIT: f64 = 2.0;

/// Distance from the last waypoint at which an NPC counts as arrived.
pub const ARRIVAL_RADIUS: f64 = 0.5;

pub fn lookahead_distance(speed: f64) -> f64 {
    MIN_LOOKAHEAD.max(LOOKAHEAD_GAIN * speed)
}

/// Point `s` meters along `path`, extrapolated straight past the end.
fn lookahead_point(path: &Polyline, s: f64) -> Vec2 {
    let len = path.length();
    if s <= len {
        return path.sample(s).0;
    }
    let pts = path.points();
    let n = pts.len();
    let dir = Vec2::from_angle((pts[n - 1] - pts[n - 2]).angle());
    pts[n - 1] + dir * (s - len)
}

/// Pure-pursuit steering toward the point one lookahead ahead of the
/// projection of `pose` on `path`. Returns the command angle and the projection.
pub fn pure_pursuit(pose: &Pose, speed: f64, path: &Polyline, wheelbase: f64) -> (f64, PolylineProjection) {
    let proj = path.project(pose.position());
    let target = lookahead_point(path, proj.s + lookahead_distance(speed));
    let to_target = target - pose.position();
    let ld = to_target.norm();
    if ld < 1e-9 {
        return (0.0, proj);
    }
    let alpha = normalize_angle(to_target.angle() - pose.heading);
    let steer = (2.0 * wheelbase * alpha.sin() / ld).atan();
    (steer.clamp(-MAX_STEERING, MAX_STEERING), proj)
}

/// Splits a longitudinal acceleration demand into throttle and brake.
pub fn accel_to_command(accel: f64, params: &VehicleParams, steering: f64) -> ControlCommand {
    let (throttle, brake) = if accel >= 0.0 {
        ((accel / params.max_accel).min(1.0), 0.0)
    } else {
        (0.0, (-accel / params.max_brake).min(1.0))
    };
    ControlCommand { throttle, brake, steering }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedPid {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl Default for SpeedPid {
    fn default() -> Self {
        SpeedPid {
            kp: SPEED_KP,
            ki: SPEED_KI,
            kd: SPEED_KD,
            integral: 0.0,
            prev_error: None,
        }
    }
}

impl SpeedPid {
    /// Acceleration demand (m/s²) for the tracking error `target - speed`.
    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        self.integral = (self.integral + error * dt).clamp(-INTEGRAL_LIMIT, INTEGRAL_LIMIT);
        let derivative = match self.prev_error {
            Some(prev) if dt > 0.0 => (error - prev) / dt,
            _ => 0.0,
        };
        self.prev_error = Some(error);
        self.kp * error + self.ki * self.integral + self.kd * derivative
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }
}

/// Waypoint-following policy for one scripted vehicle.
#[derive(Debug, Clone)]
pub struct NpcPolicy {
    path: Polyline,
    target_speeds: Vec<f64>,
    spawn_delay: f64,
    pid: SpeedPid,
    arrived: bool,
}

impl NpcPolicy {
    pub fn new(spec: &NpcSpec) -> Self {
        let points = spec.waypoints.iter().map(Pose::position).collect();
        NpcPolicy {
            path: Polyline::new(points).expect("validated NPC has >= 2 waypoints"),
            target_speeds: spec.target_speeds.clone(),
            spawn_delay: spec.spawn_delay,
            pid: SpeedPid::default(),
            arrived: false,
        }
    }

    pub fn path(&self) -> &Polyline {
        &self.path
    }

    /// Next command; `dt` feeds the speed controller's integral.
    pub fn control(&mut self, state: &ActorState, sim_time: f64, params: &VehicleParams, dt: f64) -> ControlCommand {
        if sim_time < self.spawn_delay || self.arrived {
            self.pid.reset();
            return ControlCommand::FULL_BRAKE;
        }
        let (steering, proj) = pure_pursuit(&state.pose, state.speed, &self.path, params.wheelbase);
        if self.path.length() - proj.s <= ARRIVAL_RADIUS {
            self.arrived = true;
            self.pid.reset();
            return ControlCommand::FULL_BRAKE;
        }
        let seg = proj.segment.min(self.target_speeds.len().saturating_sub(1));
        let target = self.target_speeds.get(seg).copied().unwrap_or(0.0);
        let demand = params.drag * target + self.pid.update(target - state.speed, dt);
        accel_to_command(demand, params, steering)
    }
}

/// Stateless evaluation of the NPC policy (fresh controller state).
pub fn npc_policy(spec: &NpcSpec, state: &ActorState, sim_time: f64) -> ControlCommand {
    NpcPolicy::new(spec).control(state, sim_time, &VehicleParams::default(), 0.0)
}
