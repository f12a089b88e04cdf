//! Executes one scenario end to end: spawns actors, exchanges messages with
//! the agent each step, evaluates the oracles and records the trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{PerceptionMessage, SessionFactory};
use crate::canonical;
use crate::control::NpcPolicy;
use crate::map::{LaneMap, MapError};
use crate::scenario::{validate, EgoMission, ScenarioConfig, Violation};
use crate::sim::{obb_distance, step_world, ActorKind, ActorState, ControlCommand, StepError, VehicleParams, WorldState, DEFAULT_DT};

/// Ego speed below which it counts as stopped at its destination.
pub const ARRIVAL_SPEED: f64 = 0.5;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Footprint separation (m) at or below which the ego has collided.
    pub collision_threshold: f64,
    pub destination_tolerance: f64,
    pub stuck_speed: f64,
    pub stuck_duration: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            collision_threshold: 0.01,
            destination_tolerance: 3.0,
            stuck_speed: 0.3,
            stuck_duration: 30.0,
        }
    }
}

impl OracleConfig {
    pub fn is_valid(&self) -> bool {
        [
            self.collision_threshold,
            self.destination_tolerance,
            self.stuck_speed,
            self.stuck_duration,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    CollisionViolation,
    DestinationReached,
    Timeout,
    Stuck,
    AgentTimeout,
}

impl Outcome {
    pub fn is_violation(self) -> bool {
        self == Outcome::CollisionViolation
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerdictDetails {
    Collision { ego: String, other: String, distance: f64 },
    Destination { distance: f64, speed: f64 },
    Stuck { stopped_since: f64 },
    Timeout { duration_limit: f64 },
    AgentFailure { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub outcome: Outcome,
    pub time_of_decision: f64,
    pub details: VerdictDetails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub sim_time: f64,
    pub actors: Vec<ActorState>,
    /// Command the ego received for this frame.
    pub ego_command: ControlCommand,
}

impl Frame {
    pub fn ego(&self) -> Option<&ActorState> {
        self.actors.iter().find(|a| a.kind == ActorKind::Ego)
    }
}

/// Contact between two non-ego actors; logged, never a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contact {
    pub sim_time: f64,
    pub first: String,
    pub second: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecording {
    pub scenario_id: String,
    pub config_snapshot: ScenarioConfig,
    pub dt: f64,
    pub frames: Vec<Frame>,
    pub verdict: Verdict,
    /// Host time spent on the run (seconds); not deterministic.
    pub wall_clock: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub annotations: Vec<Contact>,
}

impl ScenarioRecording {
    /// Canonical bytes with the wall-clock field zeroed, for replay comparisons.
    pub fn deterministic_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        copy.wall_clock = 0.0;
        canonical::to_vec(&copy).expect("recording serializes")
    }

    /// Copy without frames, persisted when traffic recording is disabled.
    pub fn summary(&self) -> ScenarioRecording {
        ScenarioRecording {
            frames: Vec::new(),
            ..self.clone()
        }
    }

    pub fn deciding_frame(&self) -> Option<&Frame> {
        self.frames.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionHit {
    pub ego: String,
    pub other: String,
    pub distance: f64,
}

/// Minimum ego-to-other separation, if any other actor exists.
pub fn min_ego_distance(world: &WorldState) -> Option<CollisionHit> {
    let mut best: Option<CollisionHit> = None;
    for ego in world.actors.iter().filter(|a| a.kind == ActorKind::Ego) {
        for other in world.actors.iter().filter(|a| a.actor_id != ego.actor_id) {
            let d = obb_distance(ego, other);
            if best.as_ref().map_or(true, |b| d < b.distance) {
                best = Some(CollisionHit {
                    ego: ego.actor_id.clone(),
                    other: other.actor_id.clone(),
                    distance: d,
                });
            }
        }
    }
    best
}

/// Fires when some ego-involved pair is within `threshold`.
pub fn check_collision(world: &WorldState, threshold: f64) -> Option<CollisionHit> {
    min_ego_distance(world).filter(|h| h.distance <= threshold)
}

/// Fires when the ego is within `tolerance` of `goal` and has stopped.
/// Returns `(distance, speed)`.
pub fn check_destination(world: &WorldState, mission: &EgoMission, tolerance: f64) -> Option<(f64, f64)> {
    let ego = world.ego()?;
    let d = ego.pose.position().distance(mission.goal);
    (d <= tolerance && ego.speed < ARRIVAL_SPEED).then_some((d, ego.speed))
}

/// Non-ego pairs in contact.
pub fn npc_contacts(world: &WorldState, threshold: f64) -> Vec<(String, String, f64)> {
    let others: Vec<&ActorState> = world.actors.iter().filter(|a| a.kind != ActorKind::Ego).collect();
    let mut out = Vec::new();
    for (i, a) in others.iter().enumerate() {
        for b in &others[i + 1..] {
            if a.kind == ActorKind::Static && b.kind == ActorKind::Static {
                continue;
            }
            let d = obb_distance(a, b);
            if d <= threshold {
                out.push((a.actor_id.clone(), b.actor_id.clone(), d));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub dt: f64,
    pub seed: u64,
    /// Upper bound (s) of a seeded random delay added to every NPC spawn.
    pub spawn_jitter: f64,
    pub params: VehicleParams,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            dt: DEFAULT_DT,
            seed: 0,
            spawn_jitter: 0.0,
            params: VehicleParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario is invalid: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Step(#[from] StepError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

struct StuckTracker {
    since: Option<f64>,
}

impl StuckTracker {
    fn update(&mut self, t: f64, speed: f64, oracles: &OracleConfig) -> Option<f64> {
        if speed >= oracles.stuck_speed {
            self.since = None;
            return None;
        }
        let since = *self.since.get_or_insert(t);
        (t - since >= oracles.stuck_duration - TIME_EPS).then_some(since)
    }
}

/// Runs `config` to a verdict. The deciding frame is the last one recorded.
pub fn run_scenario(
    config: &ScenarioConfig,
    map: &LaneMap,
    agent: &dyn SessionFactory,
    oracles: &OracleConfig,
    options: &RunOptions,
) -> Result<ScenarioRecording, RunError> {
    let started = Instant::now();
    let violations = validate(config, map);
    if !violations.is_empty() {
        return Err(RunError::Invalid(violations));
    }
    let mission = EgoMission::resolve(&config.ego, map)?;
    let dt = options.dt;

    let mut npcs = config.npc_vehicles.clone();
    if options.spawn_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for npc in &mut npcs {
            npc.spawn_delay += rng.gen_range(0.0..options.spawn_jitter);
        }
    }
    let mut policies: Vec<(String, NpcPolicy)> = npcs.iter().map(|n| (n.actor_id.clone(), NpcPolicy::new(n))).collect();

    let mut world = WorldState {
        sim_time: 0.0,
        actors: config.initial_actors(&mission),
    };
    let mut frames = Vec::new();
    let mut annotations = Vec::new();
    let mut touching: BTreeSet<(String, String)> = BTreeSet::new();
    let mut stuck = StuckTracker { since: None };
    let mut session = agent.open();

    let verdict = 'run: {
        for k in 0u64.. {
            let t = k as f64 * dt;
            world.sim_time = t;
            let ego = world.ego().expect("ego spawned").clone();

            let reply = match &mut session {
                Ok(s) => {
                    let perception = PerceptionMessage {
                        sim_time: t,
                        ego_state: ego.clone(),
                        obstacles: world.actors.iter().filter(|a| a.kind != ActorKind::Ego).cloned().collect(),
                    };
                    s.exchange(&perception).map(|c| c.command.clamped()).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.to_string()),
            };
            let ego_command = reply.as_ref().copied().unwrap_or_default();
            frames.push(Frame {
                sim_time: t,
                actors: world.actors.clone(),
                ego_command,
            });
            if let Err(message) = reply {
                tracing::warn!(scenario = %config.scenario_id, "agent failure: {message}");
                break 'run Verdict {
                    outcome: Outcome::AgentTimeout,
                    time_of_decision: t,
                    details: VerdictDetails::AgentFailure { message },
                };
            }

            for (a, b, d) in npc_contacts(&world, oracles.collision_threshold) {
                if touching.insert((a.clone(), b.clone())) {
                    annotations.push(Contact {
                        sim_time: t,
                        first: a,
                        second: b,
                        distance: d,
                    });
                }
            }

            if let Some(hit) = check_collision(&world, oracles.collision_threshold) {
                break 'run Verdict {
                    outcome: Outcome::CollisionViolation,
                    time_of_decision: t,
                    details: VerdictDetails::Collision {
                        ego: hit.ego,
                        other: hit.other,
                        distance: hit.distance,
                    },
                };
            }
            if let Some((distance, speed)) = check_destination(&world, &mission, oracles.destination_tolerance) {
                break 'run Verdict {
                    outcome: Outcome::DestinationReached,
                    time_of_decision: t,
                    details: VerdictDetails::Destination { distance, speed },
                };
            }
            if let Some(since) = stuck.update(t, ego.speed, oracles) {
                break 'run Verdict {
                    outcome: Outcome::Stuck,
                    time_of_decision: t,
                    details: VerdictDetails::Stuck { stopped_since: since },
                };
            }
            if t >= config.duration_limit - TIME_EPS {
                break 'run Verdict {
                    outcome: Outcome::Timeout,
                    time_of_decision: t,
                    details: VerdictDetails::Timeout {
                        duration_limit: config.duration_limit,
                    },
                };
            }

            let mut controls = BTreeMap::new();
            controls.insert(ego.actor_id.clone(), ego_command);
            for (id, policy) in &mut policies {
                let state = world.actor(id).expect("npc spawned");
                controls.insert(id.clone(), policy.control(state, t, &options.params, dt));
            }
            world = step_world(&world, &controls, &options.params, dt)?;
        }
        unreachable!("the step loop only exits through a verdict")
    };

    Ok(ScenarioRecording {
        scenario_id: config.scenario_id.clone(),
        config_snapshot: config.clone(),
        dt,
        frames,
        verdict,
        wall_clock: started.elapsed().as_secs_f64(),
        rng_seed: options.seed,
        annotations,
    })
}

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: recording already exists")]
    Exists { path: PathBuf },
    #[error("{path}: schema violation at {pointer}: {message}")]
    Schema {
        path: PathBuf,
        pointer: String,
        message: String,
    },
}

pub fn recording_file_name(scenario_id: &str) -> String {
    format!("{scenario_id}.record.json")
}

/// Writes `rec` as canonical JSON into `dir`. Never overwrites.
pub fn write_recording(rec: &ScenarioRecording, dir: &Path) -> Result<PathBuf, RecordingError> {
    let path = dir.join(recording_file_name(&rec.scenario_id));
    let io_err = |source| RecordingError::Io {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let bytes = canonical::to_vec(rec).expect("recording serializes");
    let mut file = match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(RecordingError::Exists { path }),
        Err(e) => return Err(io_err(e)),
    };
    file.write_all(&bytes).and_then(|_| file.sync_all()).map_err(io_err)?;
    Ok(path)
}

pub fn read_recording(path: &Path) -> Result<ScenarioRecording, RecordingError> {
    let text = fs::read_to_string(path).map_err(|source| RecordingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_recording(&text).map_err(|(pointer, message)| RecordingError::Schema {
        path: path.to_path_buf(),
        pointer,
        message,
    })
}

/// Parses recording JSON, reporting failures as `(pointer, message)`.
pub fn parse_recording(text: &str) -> Result<ScenarioRecording, (String, String)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let rec: ScenarioRecording = serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        (canonical::json_pointer(e.path(), &message), message)
    })?;
    if rec.frames.windows(2).any(|w| w[1].sim_time <= w[0].sim_time) {
        return Err(("/frames".into(), "frame times must strictly increase".into()));
    }
    Ok(rec)
}
