//! Message bridge between the simulator and the driving stack under test.
//!
//! Wire format: `[u32 big-endian body length][UTF-8 canonical JSON body]`.
//! The body carries a `"type"` of `"perception"` (simulator to agent) or
//! `"control"` (agent to simulator). Sessions run in lockstep: one perception
//! message per simulation step, answered by exactly one control message.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::control::{accel_to_command, pure_pursuit, SPEED_KP};
use crate::geometry::{normalize_angle, Obb, Pose, Vec2};
use crate::map::Route;
use crate::scenario::EgoMission;
use crate::sim::{obb_distance, ActorKind, ActorState, ControlCommand, VehicleParams};

pub const HEADER_LEN: usize = 4;
/// Frames larger than this are rejected before allocation.
pub const MAX_BODY_LEN: usize = 16 * 1024 * 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const BRIDGE_ADDR_ENV: &str = "SCENOFUZZ_BRIDGE_ADDR";

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionMessage {
    pub sim_time: f64,
    pub ego_state: ActorState,
    /// Every non-ego actor, world frame.
    pub obstacles: Vec<ActorState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMessage {
    /// Echo of the perception message being answered.
    pub sim_time: f64,
    pub command: ControlCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Perception(PerceptionMessage),
    Control(ControlMessage),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Body {
    Perception {
        sim_time: f64,
        ego: ActorState,
        obstacles: Vec<ActorState>,
    },
    Control {
        sim_time: f64,
        throttle: f64,
        brake: f64,
        steering: f64,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("frame body of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("frame body is not UTF-8")]
    InvalidUtf8,
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let body = match msg {
        Message::Perception(p) => Body::Perception {
            sim_time: p.sim_time,
            ego: p.ego_state.clone(),
            obstacles: p.obstacles.clone(),
        },
        Message::Control(c) => Body::Control {
            sim_time: c.sim_time,
            throttle: c.command.throttle,
            brake: c.command.brake,
            steering: c.command.steering,
        },
    };
    let json = canonical::to_vec(&body).expect("message serializes");
    let mut frame = Vec::with_capacity(HEADER_LEN + json.len());
    frame.extend_from_slice(&(json.len() as u32).to_be_bytes());
    frame.extend_from_slice(&json);
    frame
}

/// Body length declared by a frame header.
pub fn declared_len(header: [u8; HEADER_LEN]) -> usize {
    u32::from_be_bytes(header) as usize
}

/// Decodes the frame at the start of `bytes`, returning the message and the
/// number of bytes consumed. Never reads past the declared length.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let len = declared_len(bytes[..HEADER_LEN].try_into().expect("4 bytes"));
    if len > MAX_BODY_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let end = HEADER_LEN + len;
    if bytes.len() < end {
        return Err(FrameError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok((decode_body(&bytes[HEADER_LEN..end])?, end))
}

fn decode_body(body: &[u8]) -> Result<Message, FrameError> {
    let text = std::str::from_utf8(body).map_err(|_| FrameError::InvalidUtf8)?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| FrameError::Schema(e.to_string()))?;
    match value.get("type").and_then(|t| t.as_str()) {
        Some("perception") | Some("control") => {}
        Some(other) => return Err(FrameError::UnknownType(other.to_string())),
        None => return Err(FrameError::Schema("missing string field \"type\"".into())),
    }
    let body: Body = serde_json::from_value(value).map_err(|e| FrameError::Schema(e.to_string()))?;
    Ok(match body {
        Body::Perception {
            sim_time,
            ego,
            obstacles,
        } => Message::Perception(PerceptionMessage {
            sim_time,
            ego_state: ego,
            obstacles,
        }),
        Body::Control {
            sim_time,
            throttle,
            brake,
            steering,
        } => Message::Control(ControlMessage {
            sim_time,
            command: ControlCommand {
                throttle,
                brake,
                steering,
            },
        }),
    })
}

/// Reads one frame (header and body). `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = declared_len(header);
    if len > MAX_BODY_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, FrameError::TooLarge(len)));
    }
    let mut frame = vec![0u8; HEADER_LEN + len];
    frame[..HEADER_LEN].copy_from_slice(&header);
    reader.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(Some(frame))
}

// ---------------------------------------------------------------------------
// Agent side
// ---------------------------------------------------------------------------

/// The system under test: answers each perception message with a command.
pub trait EgoAgent: Send {
    fn respond(&mut self, perception: &PerceptionMessage) -> ControlMessage;
}

/// Creates one agent per bridge session.
pub trait AgentFactory: Send + Sync {
    fn create(&self) -> Box<dyn EgoAgent>;
}

impl<F> AgentFactory for F
where
    F: Fn() -> Box<dyn EgoAgent> + Send + Sync,
{
    fn create(&self) -> Box<dyn EgoAgent> {
        self()
    }
}

/// Configuration of the built-in reference driving agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoAgentConfig {
    pub route: Route,
    /// Arc length along `route` where the agent stops.
    pub goal_s: f64,
    pub cruise_speed: f64,
    /// Skip every obstacle check.
    pub fault_ignore_obstacles: bool,
    /// Skip vehicles moving across the ego's heading.
    pub fault_ignore_junction_traffic: bool,
    pub params: VehicleParams,
}

pub const DEFAULT_CRUISE_SPEED: f64 = 8.0;
pub const CORRIDOR_LENGTH: f64 = 25.0;
pub const CORRIDOR_MARGIN: f64 = 1.0;
pub const TIME_HEADWAY: f64 = 2.0;
pub const MIN_GAP: f64 = 6.0;
pub const OFF_ROUTE_DISTANCE: f64 = 20.0;
/// Vehicles whose heading differs from the ego's by more than this are
/// treated as crossing (junction) traffic.
pub const CROSSING_ANGLE: f64 = std::f64::consts::FRAC_PI_6;
const GOAL_HOLD: f64 = 0.5;
const COMFORT_DECEL: f64 = 2.0;
/// Prediction horizon (s) and step for crossing traffic.
pub const YIELD_HORIZON: f64 = 6.0;
const YIELD_STEP: f64 = 0.25;
/// Extra time (s) kept between the ego and crossing traffic in a conflict zone.
pub const YIELD_BUFFER: f64 = 1.0;
const CONFLICT_MARGIN: f64 = 1.0;
/// Speed assumed for the ego when timing a conflict from standstill.
const YIELD_PLANNING_SPEED: f64 = 2.0;

impl EgoAgentConfig {
    /// Drives `mission` with default settings and no faults.
    pub fn for_mission(mission: &EgoMission) -> Self {
        Self::new(mission.route.clone(), mission.goal_s)
    }

    pub fn new(route: Route, goal_s: f64) -> Self {
        EgoAgentConfig {
            route,
            goal_s,
            cruise_speed: DEFAULT_CRUISE_SPEED,
            fault_ignore_obstacles: false,
            fault_ignore_junction_traffic: false,
            params: VehicleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentReply {
    pub control: ControlMessage,
    /// Set when the ego was too far from its route to follow it.
    pub off_route: bool,
}

fn is_crossing(ego: &ActorState, other: &ActorState) -> bool {
    other.kind == ActorKind::Npc && normalize_angle(other.pose.heading - ego.pose.heading).abs() > CROSSING_ANGLE
}

/// Gap to the nearest obstacle inside the forward corridor, if any.
pub fn corridor_gap(config: &EgoAgentConfig, ego: &ActorState, obstacles: &[ActorState]) -> Option<f64> {
    if config.fault_ignore_obstacles {
        return None;
    }
    let half = ego.body.length / 2.0;
    let forward = Vec2::from_angle(ego.pose.heading);
    let reach = half + CORRIDOR_LENGTH;
    let center = ego.pose.position() + forward * (reach / 2.0);
    let corridor = Obb::new(
        &Pose::new(center.x, center.y, ego.pose.heading),
        reach,
        ego.body.width + CORRIDOR_MARGIN,
    );
    obstacles
        .iter()
        .filter(|o| !(config.fault_ignore_junction_traffic && is_crossing(ego, o)))
        .filter(|o| corridor.intersects(&o.obb()))
        .filter(|o| (o.pose.position() - ego.pose.position()).dot(forward) > 0.0)
        .map(|o| obb_distance(ego, o))
        .min_by(f64::total_cmp)
}

/// Distance from the ego front to the nearest conflict zone that a crossing
/// vehicle, extrapolated at constant velocity, occupies while the ego would
/// pass through it. Zones the ego has already entered are not yielded to.
pub fn yield_gap(config: &EgoAgentConfig, ego: &ActorState, ego_s: f64, obstacles: &[ActorState]) -> Option<f64> {
    if config.fault_ignore_junction_traffic {
        return None;
    }
    let path = &config.route.stitched;
    let ego_half = ego.body.length / 2.0;
    let v_plan = ego.speed.max(YIELD_PLANNING_SPEED);
    let steps = (YIELD_HORIZON / YIELD_STEP).round() as usize;
    let mut nearest: Option<f64> = None;
    for npc in obstacles.iter().filter(|o| is_crossing(ego, o)) {
        let reach = npc.body.length.max(npc.body.width) / 2.0 + CONFLICT_MARGIN;
        let lateral_limit = ego.body.width / 2.0 + reach;
        let velocity = Vec2::from_angle(npc.pose.heading) * npc.speed;
        let mut occupied: Option<(f64, f64, f64)> = None;
        for k in 0..=steps {
            let t = k as f64 * YIELD_STEP;
            let proj = path.project(npc.pose.position() + velocity * t);
            let ahead = proj.s - ego_s;
            if proj.distance > lateral_limit || ahead <= 0.0 || ahead > CORRIDOR_LENGTH + ego_half + reach {
                if occupied.is_some() {
                    break;
                }
                continue;
            }
            occupied = Some(match occupied {
                None => (t, t, proj.s),
                Some((t_in, _, s)) => (t_in, t, s),
            });
        }
        let Some((npc_in, npc_out, conflict_s)) = occupied else { continue };
        let entry = conflict_s - reach - (ego_s + ego_half);
        if entry <= 0.0 {
            continue;
        }
        let exit = conflict_s + reach - (ego_s - ego_half);
        let (ego_in, ego_out) = (entry / v_plan, exit / v_plan);
        if npc_in < ego_out + YIELD_BUFFER && npc_out > ego_in - YIELD_BUFFER {
            nearest = Some(nearest.map_or(entry, |n| n.min(entry)));
        }
    }
    nearest
}

/// One decision of the reference agent. Pure in its inputs.
pub fn ego_agent_step(config: &EgoAgentConfig, perception: &PerceptionMessage) -> AgentReply {
    let ego = &perception.ego_state;
    let params = &config.params;
    let reply = |command, off_route| AgentReply {
        control: ControlMessage {
            sim_time: perception.sim_time,
            command,
        },
        off_route,
    };
    let (steering, proj) = pure_pursuit(&ego.pose, ego.speed, &config.route.stitched, params.wheelbase);
    if proj.distance > OFF_ROUTE_DISTANCE {
        return reply(ControlCommand::FULL_BRAKE, true);
    }
    let remaining = config.goal_s - proj.s;
    if remaining <= GOAL_HOLD {
        return reply(ControlCommand { steering, ..ControlCommand::FULL_BRAKE }, false);
    }
    let v = ego.speed;
    let target = config.cruise_speed.min((2.0 * COMFORT_DECEL * remaining).sqrt());
    let mut accel = params.drag * target + SPEED_KP * (target - v);
    // constant deceleration that stops exactly at the goal
    let stop_decel = v * v / (2.0 * remaining);
    if stop_decel > 0.5 * COMFORT_DECEL {
        accel = accel.min(-stop_decel);
    }
    if let Some(gap) = corridor_gap(config, ego, &perception.obstacles) {
        if gap < MIN_GAP {
            return reply(ControlCommand { steering, ..ControlCommand::FULL_BRAKE }, false);
        }
        let headway = if v > 1e-6 { gap / v } else { f64::INFINITY };
        if headway < TIME_HEADWAY {
            let brake = ((TIME_HEADWAY - headway) / TIME_HEADWAY).clamp(0.0, 1.0);
            accel = accel.min(-brake * params.max_brake);
        }
    }
    if let Some(gap) = yield_gap(config, ego, proj.s, &perception.obstacles) {
        // stop just short of the conflict zone
        let room = (gap - GOAL_HOLD).max(1e-3);
        accel = accel.min(-(v * v) / (2.0 * room));
        if gap < GOAL_HOLD {
            return reply(ControlCommand { steering, ..ControlCommand::FULL_BRAKE }, false);
        }
    }
    reply(accel_to_command(accel, params, steering), false)
}

/// The reference agent as a session participant.
#[derive(Debug, Clone)]
pub struct ReferenceAgent {
    pub config: EgoAgentConfig,
    pub off_route_events: usize,
}

impl ReferenceAgent {
    pub fn new(config: EgoAgentConfig) -> Self {
        ReferenceAgent {
            config,
            off_route_events: 0,
        }
    }

    /// Factory producing a fresh reference agent per session.
    pub fn factory(config: EgoAgentConfig) -> Arc<dyn AgentFactory> {
        Arc::new(move || Box::new(ReferenceAgent::new(config.clone())) as Box<dyn EgoAgent>)
    }
}

impl EgoAgent for ReferenceAgent {
    fn respond(&mut self, perception: &PerceptionMessage) -> ControlMessage {
        let reply = ego_agent_step(&self.config, perception);
        if reply.off_route {
            self.off_route_events += 1;
            tracing::debug!(sim_time = perception.sim_time, "reference agent off route");
        }
        reply.control
    }
}

// ---------------------------------------------------------------------------
// Runner side
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("connection to {0} refused")]
    ConnectRefused(String),
    #[error("no control reply within {0:?}")]
    Timeout(Duration),
    #[error("agent disconnected")]
    Disconnected,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("bridge I/O: {0}")]
    Io(#[from] io::Error),
    #[error("no in-process agent registered as {0:?}")]
    UnknownEndpoint(String),
}

/// Counters backing the lockstep invariant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LockstepStats {
    pub perception_sent: u64,
    pub control_received: u64,
}

impl LockstepStats {
    pub fn outstanding(&self) -> u64 {
        self.perception_sent - self.control_received
    }
}

/// Runner end of one lockstep session.
pub trait AgentSession: Send {
    /// Sends `perception` and blocks for the matching control reply.
    fn exchange(&mut self, perception: &PerceptionMessage) -> Result<ControlMessage, BridgeError>;
    fn stats(&self) -> LockstepStats;
}

/// Opens one session per scenario execution.
pub trait SessionFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn AgentSession>, BridgeError>;
}

fn check_reply(frame: &[u8], sent_time: f64) -> Result<ControlMessage, BridgeError> {
    let (msg, used) = decode(frame)?;
    if used != frame.len() {
        return Err(BridgeError::Protocol("trailing bytes after control frame".into()));
    }
    match msg {
        Message::Control(c) if c.sim_time.to_bits() == sent_time.to_bits() => Ok(c),
        Message::Control(c) => Err(BridgeError::Protocol(format!(
            "reply for t={} while waiting for t={sent_time}",
            c.sim_time
        ))),
        Message::Perception(_) => Err(BridgeError::Protocol("agent sent a perception message".into())),
    }
}

/// Agent-side loop shared by both transports: decode, respond, encode.
fn agent_turn(agent: &mut dyn EgoAgent, frame: &[u8]) -> Option<Vec<u8>> {
    match decode(frame) {
        Ok((Message::Perception(p), _)) => Some(encode(&Message::Control(agent.respond(&p)))),
        Ok(_) => None,
        Err(e) => {
            tracing::warn!("agent dropped an undecodable frame: {e}");
            None
        }
    }
}

struct ChannelSession {
    to_agent: Option<Sender<Vec<u8>>>,
    from_agent: Receiver<Vec<u8>>,
    timeout: Duration,
    stats: LockstepStats,
    broken: bool,
}

impl AgentSession for ChannelSession {
    fn exchange(&mut self, perception: &PerceptionMessage) -> Result<ControlMessage, BridgeError> {
        if self.broken {
            return Err(BridgeError::Disconnected);
        }
        let frame = encode(&Message::Perception(perception.clone()));
        let tx = self.to_agent.as_ref().ok_or(BridgeError::Disconnected)?;
        tx.send(frame).map_err(|_| BridgeError::Disconnected)?;
        self.stats.perception_sent += 1;
        let reply = match self.from_agent.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                return Err(BridgeError::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                return Err(BridgeError::Disconnected);
            }
        };
        let c = check_reply(&reply, perception.sim_time)?;
        self.stats.control_received += 1;
        Ok(c)
    }

    fn stats(&self) -> LockstepStats {
        self.stats
    }
}

impl Drop for ChannelSession {
    fn drop(&mut self) {
        // closing the request channel ends the agent thread
        self.to_agent.take();
    }
}

fn spawn_channel_session(factory: &dyn AgentFactory, timeout: Duration) -> Box<dyn AgentSession> {
    let (req_tx, req_rx) = mpsc::channel::<Vec<u8>>();
    let (rep_tx, rep_rx) = mpsc::channel::<Vec<u8>>();
    let mut agent = factory.create();
    thread::Builder::new()
        .name("agent-session".into())
        .spawn(move || {
            while let Ok(frame) = req_rx.recv() {
                let Some(reply) = agent_turn(agent.as_mut(), &frame) else {
                    break;
                };
                if rep_tx.send(reply).is_err() {
                    break;
                }
            }
        })
        .expect("spawn agent thread");
    Box::new(ChannelSession {
        to_agent: Some(req_tx),
        from_agent: rep_rx,
        timeout,
        stats: LockstepStats::default(),
        broken: false,
    })
}

/// Sessions backed by an agent thread in this process.
pub struct InProcessSessions {
    factory: Arc<dyn AgentFactory>,
    timeout: Duration,
}

impl InProcessSessions {
    pub fn new(factory: Arc<dyn AgentFactory>) -> Self {
        InProcessSessions {
            factory,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl SessionFactory for InProcessSessions {
    fn open(&self) -> Result<Box<dyn AgentSession>, BridgeError> {
        Ok(spawn_channel_session(self.factory.as_ref(), self.timeout))
    }
}

struct TcpSession {
    stream: TcpStream,
    timeout: Duration,
    stats: LockstepStats,
    broken: bool,
}

impl AgentSession for TcpSession {
    fn exchange(&mut self, perception: &PerceptionMessage) -> Result<ControlMessage, BridgeError> {
        if self.broken {
            return Err(BridgeError::Disconnected);
        }
        let frame = encode(&Message::Perception(perception.clone()));
        if let Err(e) = self.stream.write_all(&frame) {
            self.broken = true;
            return Err(e.into());
        }
        self.stats.perception_sent += 1;
        let reply = match read_frame(&mut self.stream) {
            Ok(Some(f)) => f,
            Ok(None) => {
                self.broken = true;
                return Err(BridgeError::Disconnected);
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                self.broken = true;
                return Err(BridgeError::Timeout(self.timeout));
            }
            Err(e) => {
                self.broken = true;
                return Err(e.into());
            }
        };
        let c = check_reply(&reply, perception.sim_time)?;
        self.stats.control_received += 1;
        Ok(c)
    }

    fn stats(&self) -> LockstepStats {
        self.stats
    }
}

/// Where a session's agent lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Agent registered in this process under an id (`inproc://<id>`).
    InProcess(String),
    /// Agent server at `host:port` (`tcp://host:port` or bare).
    Tcp(String),
}

impl Endpoint {
    pub fn parse(text: &str) -> Endpoint {
        if let Some(id) = text.strip_prefix("inproc://") {
            Endpoint::InProcess(id.to_string())
        } else {
            Endpoint::Tcp(text.strip_prefix("tcp://").unwrap_or(text).to_string())
        }
    }

    /// Endpoint named by `SCENOFUZZ_BRIDGE_ADDR`, if set.
    pub fn from_env() -> Option<Endpoint> {
        std::env::var(BRIDGE_ADDR_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .map(|v| Endpoint::parse(v.trim()))
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::InProcess(id) => write!(f, "inproc://{id}"),
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

type Registry = Mutex<HashMap<String, Arc<dyn AgentFactory>>>;

fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

/// A running agent server. Dropping it stops accepting new sessions.
pub struct ServerHandle {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// The bound endpoint (a TCP endpoint reports its actual port).
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Endpoint::InProcess(id) = &self.endpoint {
            registry().lock().expect("registry lock").remove(id);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn serve_connection(mut stream: TcpStream, mut agent: Box<dyn EgoAgent>) {
    let _ = stream.set_nodelay(true);
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(e) => {
                tracing::debug!("agent session ended: {e}");
                return;
            }
        };
        let Some(reply) = agent_turn(agent.as_mut(), &frame) else {
            return;
        };
        if stream.write_all(&reply).is_err() {
            return;
        }
    }
}

/// Publishes an agent at `endpoint`; each connecting session gets a fresh
/// agent from `factory`. TCP sessions each run on their own thread.
pub fn serve(endpoint: &Endpoint, factory: Arc<dyn AgentFactory>) -> Result<ServerHandle, BridgeError> {
    let stop = Arc::new(AtomicBool::new(false));
    match endpoint {
        Endpoint::InProcess(id) => {
            registry().lock().expect("registry lock").insert(id.clone(), factory);
            Ok(ServerHandle {
                endpoint: endpoint.clone(),
                stop,
                accept_thread: None,
            })
        }
        Endpoint::Tcp(addr) => {
            let listener = TcpListener::bind(addr)?;
            listener.set_nonblocking(true)?;
            let local: SocketAddr = listener.local_addr()?;
            let flag = stop.clone();
            let accept_thread = thread::Builder::new()
                .name("agent-server".into())
                .spawn(move || {
                    while !flag.load(Ordering::SeqCst) {
                        match listener.accept() {
                            Ok((stream, _)) => {
                                let _ = stream.set_nonblocking(false);
                                let agent = factory.create();
                                let _ = thread::Builder::new()
                                    .name("agent-conn".into())
                                    .spawn(move || serve_connection(stream, agent));
                            }
                            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                                thread::sleep(Duration::from_millis(2));
                            }
                            Err(e) => {
                                tracing::warn!("agent server accept failed: {e}");
                                thread::sleep(Duration::from_millis(10));
                            }
                        }
                    }
                })?;
            Ok(ServerHandle {
                endpoint: Endpoint::Tcp(local.to_string()),
                stop,
                accept_thread: Some(accept_thread),
            })
        }
    }
}

/// Opens a lockstep session with the agent at `endpoint`.
pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Box<dyn AgentSession>, BridgeError> {
    match endpoint {
        Endpoint::InProcess(id) => {
            let factory = registry()
                .lock()
                .expect("registry lock")
                .get(id)
                .cloned()
                .ok_or_else(|| BridgeError::UnknownEndpoint(id.clone()))?;
            Ok(spawn_channel_session(factory.as_ref(), timeout))
        }
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr).map_err(|e| match e.kind() {
                io::ErrorKind::ConnectionRefused => BridgeError::ConnectRefused(addr.clone()),
                _ => BridgeError::Io(e),
            })?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(timeout))?;
            Ok(Box::new(TcpSession {
                stream,
                timeout,
                stats: LockstepStats::default(),
                broken: false,
            }))
        }
    }
}

/// Session factory that connects to a fixed endpoint for every scenario.
#[derive(Debug, Clone)]
pub struct EndpointSessions {
    pub endpoint: Endpoint,
    pub timeout: Duration,
}

impl SessionFactory for EndpointSessions {
    fn open(&self) -> Result<Box<dyn AgentSession>, BridgeError> {
        connect(&self.endpoint, self.timeout)
    }
}
