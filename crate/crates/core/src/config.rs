//! YAML test configuration: system, scenario, runner and engine settings.
//!
//! Every optional field has a default listed in [`documented_defaults`];
//! unknown keys are rejected with the dotted path of the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::bridge::Endpoint;
use crate::engine::campaign::{AgentChoice, AgentSettings, CampaignSetup};
use crate::engine::search::{
    AlgorithmName, AlgorithmParams, DEFAULT_ARCHIVE_THRESHOLD, DEFAULT_LOCAL_RUN_HOUR, DEFAULT_PC, DEFAULT_PM,
    DEFAULT_POPULATION_SIZE, DEFAULT_RUN_HOUR, DEFAULT_SURROGATE_POOL,
};
use crate::map::{resolve_map, LaneMap};
use crate::runner::OracleConfig;
use crate::scenario::{validate, Bounds, EgoSpec, MutationSpace, ScenarioConfig};
use crate::sim::{BodyDims, DEFAULT_DT};
use crate::templates::{auto_template, bundled_template, DEFAULT_DURATION};

pub const OUTPUT_ROOT_ENV: &str = "SCENOFUZZ_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "results";
pub const DEFAULT_NPC_COUNT: usize = 3;
/// Runner names accepted for the built-in local runner.
pub const RUNNER_NAMES: &[&str] = &["ApolloSim", "local"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default)]
    pub system: SystemSettings,
    pub scenario: ScenarioSettings,
    #[serde(default)]
    pub scenario_runner: RunnerSettings,
    pub testing_engine: EngineSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSettings {
    /// Raises log verbosity; has no other effect.
    pub debug: bool,
    pub resume: bool,
    pub output_root: PathBuf,
}

impl Default for SystemSettings {
    fn default() -> Self {
        SystemSettings {
            debug: false,
            resume: false,
            output_root: PathBuf::from(DEFAULT_OUTPUT_ROOT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSettings {
    pub map_name: String,
    pub start_lane_id: String,
    pub end_lane_id: String,
    /// Defaults to the template's station, or 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_station: Option<f64>,
    /// Defaults to the template's station, or half the end lane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_station: Option<f64>,
    /// Bundled template supplying the NPCs; absent means auto-generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default = "default_npc_count")]
    pub npc_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_limit: Option<f64>,
    #[serde(default)]
    pub mutation_space: MutationOverrides,
}

fn default_npc_count() -> usize {
    DEFAULT_NPC_COUNT
}

/// Per-gene bounds; a missing key keeps the default, `null` disables the gene.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationOverrides {
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub waypoint_offset: Option<Option<Bounds>>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub segment_speed: Option<Option<Bounds>>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub spawn_delay: Option<Option<Bounds>>,
}

impl MutationOverrides {
    pub fn apply(&self, mut space: MutationSpace) -> MutationSpace {
        if let Some(b) = self.waypoint_offset {
            space.waypoint_offset = b;
        }
        if let Some(b) = self.segment_speed {
            space.segment_speed = b;
        }
        if let Some(b) = self.spawn_delay {
            space.spawn_delay = b;
        }
        space
    }
}

/// Distinguishes an explicit `null` from an absent key.
fn present<'de, D, T>(de: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(de).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerSettings {
    pub name: String,
    #[serde(default)]
    pub parameters: RunnerParameters,
}

impl Default for RunnerSettings {
    fn default() -> Self {
        RunnerSettings {
            name: RUNNER_NAMES[0].to_string(),
            parameters: RunnerParameters::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunnerParameters {
    /// Accepted for compatibility and ignored.
    #[serde(deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub container_name: Option<Option<String>>,
    pub save_traffic_recording: bool,
    /// Absent means one worker per CPU.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker_pool: Option<usize>,
    pub dt: f64,
    pub agent: AgentSection,
}

impl Default for RunnerParameters {
    fn default() -> Self {
        RunnerParameters {
            container_name: None,
            save_traffic_recording: true,
            worker_pool: None,
            dt: DEFAULT_DT,
            agent: AgentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    /// `tcp://host:port` or `inproc://name`; absent means the built-in agent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub cruise_speed: f64,
    pub fault_ignore_obstacles: bool,
    pub fault_ignore_junction_traffic: bool,
}

impl Default for AgentSection {
    fn default() -> Self {
        let d = AgentSettings::default();
        AgentSection {
            endpoint: None,
            cruise_speed: d.cruise_speed,
            fault_ignore_obstacles: d.fault_ignore_obstacles,
            fault_ignore_junction_traffic: d.fault_ignore_junction_traffic,
        }
    }
}

impl AgentSection {
    pub fn reference(&self) -> AgentSettings {
        AgentSettings {
            cruise_speed: self.cruise_speed,
            fault_ignore_obstacles: self.fault_ignore_obstacles,
            fault_ignore_junction_traffic: self.fault_ignore_junction_traffic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSettings {
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: String,
    #[serde(default)]
    pub parameters: AlgorithmParameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmParameters {
    pub run_hour: f64,
    pub local_run_hour: f64,
    pub population_size: usize,
    pub pm: f64,
    pub pc: f64,
    pub archive_threshold: f64,
    pub surrogate_pool: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stagnation_generations: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stall_rotations: Option<f64>,
}

impl Default for AlgorithmParameters {
    fn default() -> Self {
        AlgorithmParameters {
            run_hour: DEFAULT_RUN_HOUR,
            local_run_hour: DEFAULT_LOCAL_RUN_HOUR,
            population_size: DEFAULT_POPULATION_SIZE,
            pm: DEFAULT_PM,
            pc: DEFAULT_PC,
            archive_threshold: DEFAULT_ARCHIVE_THRESHOLD,
            surrogate_pool: DEFAULT_SURROGATE_POOL,
            stagnation_generations: None,
            energy_cap: None,
            top_k: None,
            stall_rotations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub collision: CollisionOracle,
    pub destination: DestinationOracle,
    pub stuck: StuckOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionOracle {
    /// Meters of footprint separation.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DestinationOracle {
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StuckOracle {
    pub speed: f64,
    pub duration: f64,
}

impl Default for CollisionOracle {
    fn default() -> Self {
        CollisionOracle {
            threshold: OracleConfig::default().collision_threshold,
        }
    }
}

impl Default for DestinationOracle {
    fn default() -> Self {
        DestinationOracle {
            tolerance: OracleConfig::default().destination_tolerance,
        }
    }
}

impl Default for StuckOracle {
    fn default() -> Self {
        let o = OracleConfig::default();
        StuckOracle {
            speed: o.stuck_speed,
            duration: o.stuck_duration,
        }
    }
}

impl OracleSection {
    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            collision_threshold: self.collision.threshold,
            destination_tolerance: self.destination.tolerance,
            stuck_speed: self.stuck.speed,
            stuck_duration: self.stuck.duration,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: cannot read config: {message}")]
    Unreadable { path: PathBuf, message: String },
}

impl ConfigError {
    fn invalid(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Dotted key path the error refers to.
    pub fn path(&self) -> String {
        match self {
            ConfigError::Parse { path, .. } | ConfigError::Invalid { path, .. } => path.clone(),
            ConfigError::Unreadable { path, .. } => path.display().to_string(),
        }
    }
}

/// Parses and validates a test configuration.
pub fn parse_config(text: &str) -> Result<TestConfig, ConfigError> {
    let de = serde_yaml::Deserializer::from_str(text);
    let config: TestConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        ConfigError::Parse {
            path: if path == "." { "<root>".into() } else { path },
            message,
        }
    })?;
    config.check()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TestConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

/// Canonical YAML for a configuration.
pub fn to_yaml(config: &TestConfig) -> String {
    serde_yaml::to_string(config).expect("config serializes")
}

impl TestConfig {
    /// Semantic checks that need no map.
    pub fn check(&self) -> Result<(), ConfigError> {
        let runner = &self.scenario_runner;
        if !RUNNER_NAMES.contains(&runner.name.as_str()) {
            return Err(ConfigError::invalid(
                "scenario_runner.name",
                format!("unknown runner {:?}; expected one of {RUNNER_NAMES:?}", runner.name),
            ));
        }
        let p = &runner.parameters;
        if !(p.dt.is_finite() && p.dt > 0.0) {
            return Err(ConfigError::invalid("scenario_runner.parameters.dt", "must be positive"));
        }
        if p.worker_pool == Some(0) {
            return Err(ConfigError::invalid("scenario_runner.parameters.worker_pool", "must be at least 1"));
        }
        if !(p.agent.cruise_speed.is_finite() && p.agent.cruise_speed > 0.0) {
            return Err(ConfigError::invalid("scenario_runner.parameters.agent.cruise_speed", "must be positive"));
        }
        if let Some(d) = self.scenario.duration_limit {
            if !(d.is_finite() && d > 0.0) {
                return Err(ConfigError::invalid("scenario.duration_limit", "must be positive"));
            }
        }
        let space = self.mutation_space();
        for (key, b) in [
            ("waypoint_offset", space.waypoint_offset),
            ("segment_speed", space.segment_speed),
            ("spawn_delay", space.spawn_delay),
        ] {
            if let Some(b) = b {
                if !(b.low.is_finite() && b.high.is_finite() && b.low <= b.high) {
                    return Err(ConfigError::invalid(
                        &format!("scenario.mutation_space.{key}"),
                        format!("[{}, {}] is not an interval", b.low, b.high),
                    ));
                }
            }
        }
        self.algorithm_params()?;
        if !self.testing_engine.oracle.oracle_config().is_valid() {
            return Err(ConfigError::invalid("testing_engine.oracle", "thresholds must be positive"));
        }
        Ok(())
    }

    pub fn algorithm_params(&self) -> Result<AlgorithmParams, ConfigError> {
        let section = &self.testing_engine.algorithm;
        let name = AlgorithmName::parse(&section.name).ok_or_else(|| {
            let known: Vec<&str> = AlgorithmName::ALL.iter().map(|a| a.as_str()).collect();
            ConfigError::invalid(
                "testing_engine.algorithm.name",
                format!("unknown algorithm {:?}; expected one of {known:?}", section.name),
            )
        })?;
        let p = &section.parameters;
        let mut params = AlgorithmParams::new(name);
        params.run_hour = p.run_hour;
        params.local_run_hour = p.local_run_hour;
        params.population_size = p.population_size;
        params.pm = p.pm;
        params.pc = p.pc;
        params.archive_threshold = p.archive_threshold;
        params.surrogate_pool = p.surrogate_pool;
        for (key, v) in [
            ("stagnation_generations", p.stagnation_generations),
            ("energy_cap", p.energy_cap),
            ("top_k", p.top_k),
            ("stall_rotations", p.stall_rotations),
        ] {
            if let Some(v) = v {
                params.extras.insert(key.to_string(), v);
            }
        }
        params.validate().map_err(|e| {
            let field = e.field.strip_prefix("extras.").unwrap_or(&e.field);
            ConfigError::invalid(&format!("testing_engine.algorithm.parameters.{field}"), e.message)
        })?;
        Ok(params)
    }

    pub fn mutation_space(&self) -> MutationSpace {
        self.scenario.mutation_space.apply(MutationSpace::default())
    }

    pub fn oracles(&self) -> OracleConfig {
        self.testing_engine.oracle.oracle_config()
    }

    pub fn workers(&self) -> usize {
        self.scenario_runner
            .parameters
            .worker_pool
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// Output root after applying the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.system.output_root.clone(),
        }
    }

    pub fn agent(&self) -> AgentChoice {
        let section = &self.scenario_runner.parameters.agent;
        match (&section.endpoint, Endpoint::from_env()) {
            (_, Some(e)) => AgentChoice::Remote(e),
            (Some(text), None) => AgentChoice::Remote(Endpoint::parse(text)),
            (None, None) => AgentChoice::Reference(section.reference()),
        }
    }

    pub fn map(&self, map_dir: Option<&Path>) -> Result<LaneMap, ConfigError> {
        resolve_map(&self.scenario.map_name, map_dir).map_err(|e| ConfigError::invalid("scenario.map_name", e.to_string()))
    }

    /// Seed scenario: the named template, or one generated around the ego
    /// mission, with the configured lanes and stations applied.
    pub fn template(&self, map: &LaneMap) -> Result<ScenarioConfig, ConfigError> {
        let s = &self.scenario;
        for (key, lane) in [("start_lane_id", &s.start_lane_id), ("end_lane_id", &s.end_lane_id)] {
            if map.lane(lane).is_err() {
                return Err(ConfigError::invalid(
                    &format!("scenario.{key}"),
                    format!("lane {lane:?} is not on map {}", map.name),
                ));
            }
        }
        let end_len = map.lane(&s.end_lane_id).expect("checked").length();
        let mut cfg = match &s.template {
            Some(name) => {
                let mut cfg = bundled_template(name, map).ok_or_else(|| {
                    ConfigError::invalid("scenario.template", format!("no template {name:?} for map {}", map.name))
                })?;
                if cfg.ego.start_lane != s.start_lane_id {
                    cfg.ego.start_station = 0.0;
                }
                if cfg.ego.end_lane != s.end_lane_id {
                    cfg.ego.end_station = end_len * 0.5;
                }
                cfg.ego.start_lane = s.start_lane_id.clone();
                cfg.ego.end_lane = s.end_lane_id.clone();
                cfg.ego.start_station = s.start_station.unwrap_or(cfg.ego.start_station);
                cfg.ego.end_station = s.end_station.unwrap_or(cfg.ego.end_station);
                cfg
            }
            None => {
                let ego = EgoSpec {
                    start_lane: s.start_lane_id.clone(),
                    start_station: s.start_station.unwrap_or(0.0),
                    end_lane: s.end_lane_id.clone(),
                    end_station: s.end_station.unwrap_or(end_len * 0.5),
                    body: BodyDims::CAR,
                };
                auto_template(map, ego, s.npc_count, DEFAULT_DURATION)
                    .map_err(|e| ConfigError::invalid("scenario", e.to_string()))?
            }
        };
        if let Some(d) = s.duration_limit {
            cfg.duration_limit = d;
        }
        let violations = validate(&cfg, map);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(ConfigError::invalid("scenario", text.join("; ")));
        }
        Ok(cfg)
    }

    /// Campaign setup for this configuration; run-specific fields (seed,
    /// budget override, run directory) are left for the caller.
    pub fn campaign_setup(&self, map_dir: Option<&Path>) -> Result<CampaignSetup, ConfigError> {
        let map = self.map(map_dir)?;
        let template = self.template(&map)?;
        let mut setup = CampaignSetup::new(self.algorithm_params()?, template, map);
        setup.space = self.mutation_space();
        setup.oracles = self.oracles();
        setup.dt = self.scenario_runner.parameters.dt;
        setup.agent = self.agent();
        setup.workers = self.workers();
        setup.save_traffic_recording = self.scenario_runner.parameters.save_traffic_recording;
        setup.resume = self.system.resume;
        Ok(setup)
    }
}

/// Every optional key with its default, as rendered in the reference docs.
pub fn documented_defaults() -> Vec<(&'static str, String)> {
    let sys = SystemSettings::default();
    let run = RunnerParameters::default();
    let alg = AlgorithmParameters::default();
    let oracle = OracleSection::default();
    let space = MutationSpace::default();
    let bounds = |b: Option<Bounds>| b.map_or("null".to_string(), |b| format!("[{}, {}]", b.low, b.high));
    let mut rows = vec![
        ("system.debug", sys.debug.to_string()),
        ("system.resume", sys.resume.to_string()),
        ("system.output_root", sys.output_root.display().to_string()),
        ("scenario.start_station", "template value, else 0".to_string()),
        ("scenario.end_station", "template value, else half the end lane".to_string()),
        ("scenario.template", "none (auto-generated)".to_string()),
        ("scenario.npc_count", DEFAULT_NPC_COUNT.to_string()),
        ("scenario.duration_limit", format!("template value ({DEFAULT_DURATION} when auto-generated)")),
        ("scenario.mutation_space.waypoint_offset", bounds(space.waypoint_offset)),
        ("scenario.mutation_space.segment_speed", bounds(space.segment_speed)),
        ("scenario.mutation_space.spawn_delay", bounds(space.spawn_delay)),
        ("scenario_runner.name", RUNNER_NAMES[0].to_string()),
        ("scenario_runner.parameters.container_name", "ignored".to_string()),
        ("scenario_runner.parameters.save_traffic_recording", run.save_traffic_recording.to_string()),
        ("scenario_runner.parameters.worker_pool", "CPU count".to_string()),
        ("scenario_runner.parameters.dt", run.dt.to_string()),
        ("scenario_runner.parameters.agent.endpoint", "none (built-in agent)".to_string()),
        ("scenario_runner.parameters.agent.cruise_speed", run.agent.cruise_speed.to_string()),
        (
            "scenario_runner.parameters.agent.fault_ignore_obstacles",
            run.agent.fault_ignore_obstacles.to_string(),
        ),
        (
            "scenario_runner.parameters.agent.fault_ignore_junction_traffic",
            run.agent.fault_ignore_junction_traffic.to_string(),
        ),
        ("testing_engine.algorithm.parameters.run_hour", alg.run_hour.to_string()),
        ("testing_engine.algorithm.parameters.local_run_hour", alg.local_run_hour.to_string()),
        ("testing_engine.algorithm.parameters.population_size", alg.population_size.to_string()),
        ("testing_engine.algorithm.parameters.pm", alg.pm.to_string()),
        ("testing_engine.algorithm.parameters.pc", alg.pc.to_string()),
        ("testing_engine.algorithm.parameters.archive_threshold", alg.archive_threshold.to_string()),
        ("testing_engine.algorithm.parameters.surrogate_pool", alg.surrogate_pool.to_string()),
        ("testing_engine.oracle.collision.threshold", oracle.collision.threshold.to_string()),
        ("testing_engine.oracle.destination.tolerance", oracle.destination.tolerance.to_string()),
        ("testing_engine.oracle.stuck.speed", oracle.stuck.speed.to_string()),
        ("testing_engine.oracle.stuck.duration", oracle.stuck.duration.to_string()),
    ];
    for name in AlgorithmName::ALL {
        for (key, v) in name.known_extras() {
            let key: &'static str = match *key {
                "stagnation_generations" => "testing_engine.algorithm.parameters.stagnation_generations",
                "energy_cap" => "testing_engine.algorithm.parameters.energy_cap",
                "top_k" => "testing_engine.algorithm.parameters.top_k",
                "stall_rotations" => "testing_engine.algorithm.parameters.stall_rotations",
                other => unreachable!("undocumented extra {other}"),
            };
            rows.push((key, format!("{v} ({name} only)")));
        }
    }
    rows
}
