//! Fixed-timestep kinematic traffic simulation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, obb_separation, Obb, Pose};

/// Default integration step (seconds).
pub const DEFAULT_DT: f64 = 0.1;
/// Steering magnitude limit (radians).
pub const MAX_STEERING: f64 = 0.61;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDims {
    pub length: f64,
    pub width: f64,
}

impl BodyDims {
    pub const CAR: BodyDims = BodyDims { length: 4.7, width: 2.0 };

    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.width <= self.length && self.length <= 20.0
    }
}

impl Default for BodyDims {
    fn default() -> Self {
        BodyDims::CAR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Ego,
    Npc,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorState {
    pub actor_id: String,
    pub pose: Pose,
    pub speed: f64,
    /// Signed longitudinal acceleration applied during the last step.
    pub acceleration: f64,
    pub body: BodyDims,
    pub kind: ActorKind,
}

impl ActorState {
    pub fn new(actor_id: impl Into<String>, kind: ActorKind, pose: Pose, body: BodyDims) -> Self {
        ActorState {
            actor_id: actor_id.into(),
            pose,
            speed: 0.0,
            acceleration: 0.0,
            body,
            kind,
        }
    }

    pub fn obb(&self) -> Obb {
        Obb::new(&self.pose, self.body.length, self.body.width)
    }
}

/// Separation between two actors' footprints, 0 when touching or overlapping.
pub fn obb_distance(a: &ActorState, b: &ActorState) -> f64 {
    obb_separation(&a.obb(), &b.obb())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steering: f64,
}

impl ControlCommand {
    pub const FULL_BRAKE: ControlCommand = ControlCommand {
        throttle: 0.0,
        brake: 1.0,
        steering: 0.0,
    };

    /// Clamps every field into its legal range; NaN becomes 0.
    pub fn clamped(self) -> Self {
        let unit = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let steer = if self.steering.is_nan() {
            0.0
        } else {
            self.steering.clamp(-MAX_STEERING, MAX_STEERING)
        };
        ControlCommand {
            throttle: unit(self.throttle),
            brake: unit(self.brake),
            steering: steer,
        }
    }

    pub fn is_within_limits(&self) -> bool {
        (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && (-MAX_STEERING..=MAX_STEERING).contains(&self.steering)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    /// Linear drag coefficient (1/s).
    pub drag: f64,
    pub max_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.8,
            max_accel: 3.0,
            max_brake: 6.0,
            drag: 0.01,
            max_speed: 30.0,
        }
    }
}

impl VehicleParams {
    /// Throttle that holds `speed` against drag on flat ground.
    pub fn cruise_throttle(&self, speed: f64) -> f64 {
        (self.drag * speed / self.max_accel).clamp(0.0, 1.0)
    }

    /// Largest yaw rate reachable at `speed`.
    pub fn max_yaw_rate(&self, speed: f64) -> f64 {
        speed * MAX_STEERING.tan() / self.wheelbase
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
///
/// Position and heading integrate with the speed held at the start of the
/// step; the stored acceleration is the commanded one, before clamping.
pub fn step_kinematic(state: &ActorState, cmd: &ControlCommand, params: &VehicleParams, dt: f64) -> ActorState {
    let v = state.speed;
    let theta = state.pose.heading;
    let accel = cmd.throttle * params.max_accel - cmd.brake * params.max_brake - params.drag * v;
    let v_next = (v + accel * dt).clamp(0.0, params.max_speed);
    let heading = normalize_angle(theta + v / params.wheelbase * cmd.steering.tan() * dt);
    let (sin, cos) = theta.sin_cos();
    ActorState {
        pose: Pose {
            x: state.pose.x + v * cos * dt,
            y: state.pose.y + v * sin * dt,
            heading,
        },
        speed: v_next,
        acceleration: accel,
        ..state.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub sim_time: f64,
    pub actors: Vec<ActorState>,
}

impl WorldState {
    pub fn actor(&self, id: &str) -> Option<&ActorState> {
        self.actors.iter().find(|a| a.actor_id == id)
    }

    pub fn ego(&self) -> Option<&ActorState> {
        self.actors.iter().find(|a| a.kind == ActorKind::Ego)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("no control command for actor {0}")]
    MissingControl(String),
    #[error("control command for unknown or static actor {0}")]
    UnexpectedControl(String),
}

/// Advances every actor from the same pre-step snapshot.
///
/// `controls` must name exactly the non-static actors.
pub fn step_world(
    world: &WorldState,
    controls: &BTreeMap<String, ControlCommand>,
    params: &VehicleParams,
    dt: f64,
) -> Result<WorldState, StepError> {
    let mut used = 0usize;
    let mut actors = Vec::with_capacity(world.actors.len());
    for actor in &world.actors {
        if actor.kind == ActorKind::Static {
            if controls.contains_key(&actor.actor_id) {
                return Err(StepError::UnexpectedControl(actor.actor_id.clone()));
            }
            actors.push(actor.clone());
            continue;
        }
        let cmd = controls
            .get(&actor.actor_id)
            .ok_or_else(|| StepError::MissingControl(actor.actor_id.clone()))?;
        used += 1;
        actors.push(step_kinematic(actor, cmd, params, dt));
    }
    if used != controls.len() {
        let extra = controls
            .keys()
            .find(|k| world.actor(k).map_or(true, |a| a.kind == ActorKind::Static))
            .cloned()
            .unwrap_or_default();
        return Err(StepError::UnexpectedControl(extra));
    }
    Ok(WorldState {
        sim_time: world.sim_time + dt,
        actors,
    })
}

/// Time of step `k` for a fixed `dt`, computed without accumulation.
pub fn step_time(k: u64, dt: f64) -> f64 {
    k as f64 * dt
}
