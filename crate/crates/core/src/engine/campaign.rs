//! Budgeted testing campaigns: batch dispatch to a worker pool, an
//! append-only evaluation log, per-evaluation checkpoints and resume.
//!
//! Resume replays the strategy from its seed, answering proposals from the
//! checkpointed log instead of the simulator, then continues live. Because
//! strategies are deterministic in their observations, the continued log is
//! the log an uninterrupted run would have produced.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{
    BridgeError, EgoAgentConfig, Endpoint, EndpointSessions, InProcessSessions, ReferenceAgent, SessionFactory,
    DEFAULT_CRUISE_SPEED, DEFAULT_TIMEOUT,
};
use crate::canonical;
use crate::map::{LaneMap, MapError};
use crate::runner::{run_scenario, write_recording, OracleConfig, Outcome, RecordingError, RunOptions};
use crate::scenario::{flatten, unflatten, EgoMission, FlattenError, MutationSpace, ParameterVector, ScenarioConfig};
use crate::sim::{VehicleParams, DEFAULT_DT};

use super::feedback::{feedback_from, Feedback, BEHAVIOR_LEN, NO_OBSTACLE_FITNESS};
use super::search::{build_algorithm, AlgorithmName, AlgorithmParams, BudgetHint, Observation, ParamError, SearchSpace};

pub const STATE_FILE: &str = "campaign.state.json";
pub const REPORT_FILE: &str = "report.json";
pub const RECORDINGS_DIR: &str = "recordings";
pub const STATE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSettings {
    pub cruise_speed: f64,
    pub fault_ignore_obstacles: bool,
    pub fault_ignore_junction_traffic: bool,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            cruise_speed: DEFAULT_CRUISE_SPEED,
            fault_ignore_obstacles: false,
            fault_ignore_junction_traffic: false,
        }
    }
}

impl AgentSettings {
    pub fn agent_config(&self, mission: &EgoMission) -> EgoAgentConfig {
        EgoAgentConfig {
            cruise_speed: self.cruise_speed,
            fault_ignore_obstacles: self.fault_ignore_obstacles,
            fault_ignore_junction_traffic: self.fault_ignore_junction_traffic,
            ..EgoAgentConfig::for_mission(mission)
        }
    }
}

/// Which system under test drives the ego.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentChoice {
    /// Built-in reference agent, one in-process session per scenario.
    Reference(AgentSettings),
    /// External agent reached through the bridge.
    Remote(Endpoint),
}

impl AgentChoice {
    pub fn sessions(&self, mission: &EgoMission) -> Arc<dyn SessionFactory> {
        match self {
            AgentChoice::Reference(s) => Arc::new(InProcessSessions::new(ReferenceAgent::factory(s.agent_config(mission)))),
            AgentChoice::Remote(endpoint) => Arc::new(EndpointSessions {
                endpoint: endpoint.clone(),
                timeout: DEFAULT_TIMEOUT,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub algorithm: AlgorithmParams,
    pub template: ScenarioConfig,
    pub map: LaneMap,
    pub space: MutationSpace,
    pub oracles: OracleConfig,
    pub dt: f64,
    pub agent: AgentChoice,
    pub workers: usize,
    pub seed: u64,
    pub max_evals: Option<usize>,
    pub save_traffic_recording: bool,
    /// Directory for the state file, report and recordings.
    pub run_dir: Option<PathBuf>,
    pub resume: bool,
    /// Raised from outside (e.g. Ctrl-C) to stop after in-flight work.
    pub stop: Option<Arc<AtomicBool>>,
    /// Stops as if interrupted once the log holds this many entries.
    pub halt_after: Option<usize>,
}

impl CampaignSetup {
    pub fn new(algorithm: AlgorithmParams, template: ScenarioConfig, map: LaneMap) -> Self {
        CampaignSetup {
            algorithm,
            template,
            map,
            space: MutationSpace::default(),
            oracles: OracleConfig::default(),
            dt: DEFAULT_DT,
            agent: AgentChoice::Reference(AgentSettings::default()),
            workers: 1,
            seed: 0,
            max_evals: None,
            save_traffic_recording: true,
            run_dir: None,
            resume: false,
            stop: None,
            halt_after: None,
        }
    }
}

/// One entry of the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub index: usize,
    pub scenario_id: String,
    pub values: Vec<f64>,
    pub config: ScenarioConfig,
    /// Absent when the generated scenario could not be executed.
    pub feedback: Option<Feedback>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
}

impl EvalRecord {
    pub fn outcome(&self) -> Option<Outcome> {
        self.feedback.as_ref().map(|f| f.verdict.outcome)
    }

    pub fn is_violation(&self) -> bool {
        self.outcome() == Some(Outcome::CollisionViolation)
    }

    pub fn observation(&self, elapsed: f64) -> Observation {
        match &self.feedback {
            Some(f) => Observation {
                fitness: f.fitness,
                behavior: f.behavior_vector.clone(),
                quality: f.quality_score,
                violation: self.is_violation(),
                elapsed,
            },
            None => Observation {
                fitness: NO_OBSTACLE_FITNESS,
                behavior: vec![0.0; BEHAVIOR_LEN],
                quality: 0.0,
                violation: false,
                elapsed,
            },
        }
    }
}

/// Canonical bytes of an evaluation log.
pub fn log_bytes(log: &[EvalRecord]) -> Vec<u8> {
    canonical::to_vec(log).expect("log serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignState {
    pub format: u32,
    pub algorithm: AlgorithmName,
    pub seed: u64,
    /// Digest of everything that shapes the search besides the seed.
    pub setup_digest: String,
    pub elapsed_seconds: f64,
    /// Campaign time at which each log entry completed.
    pub completion_times: Vec<f64>,
    pub log: Vec<EvalRecord>,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignReport {
    pub algorithm: AlgorithmName,
    pub seed: u64,
    pub evaluations: usize,
    pub violations: usize,
    pub violation_ids: Vec<String>,
    pub outcomes: BTreeMap<Outcome, usize>,
    pub rejected: usize,
    pub fitness_series: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub interrupted: bool,
}

impl CampaignReport {
    pub fn from_log(algorithm: AlgorithmName, seed: u64, log: &[EvalRecord], wall_clock: f64, interrupted: bool) -> Self {
        let mut outcomes = BTreeMap::new();
        for o in log.iter().filter_map(EvalRecord::outcome) {
            *outcomes.entry(o).or_insert(0) += 1;
        }
        let violation_ids: Vec<String> = log.iter().filter(|r| r.is_violation()).map(|r| r.scenario_id.clone()).collect();
        CampaignReport {
            algorithm,
            seed,
            evaluations: log.len(),
            violations: violation_ids.len(),
            violation_ids,
            outcomes,
            rejected: log.iter().filter(|r| r.feedback.is_none()).count(),
            fitness_series: log.iter().map(|r| r.observation(0.0).fitness).collect(),
            wall_clock_seconds: wall_clock,
            interrupted,
        }
    }

    /// Canonical bytes with wall-clock time zeroed.
    pub fn deterministic_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        copy.wall_clock_seconds = 0.0;
        canonical::to_vec(&copy).expect("report serializes")
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} evaluations, {} violations, {:.1} s{}",
            self.algorithm,
            self.evaluations,
            self.violations,
            self.wall_clock_seconds,
            if self.interrupted { " (interrupted)" } else { "" }
        )
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("algorithm parameter {0}")]
    Params(#[from] ParamError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("cannot build the search space: {0}")]
    Space(#[from] FlattenError),
    #[error("scenario template is invalid: {0}")]
    Template(String),
    #[error("agent unavailable: {0}")]
    Agent(#[from] BridgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: corrupt campaign state: {message}")]
    CorruptState { path: PathBuf, message: String },
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub report: CampaignReport,
    pub state: CampaignState,
}

pub fn scenario_id(algorithm: AlgorithmName, index: usize) -> String {
    format!("{algorithm}-{index:06}")
}

struct Evaluator<'a> {
    setup: &'a CampaignSetup,
    vector: ParameterVector,
    mission: EgoMission,
    sessions: Arc<dyn SessionFactory>,
    recordings: Option<PathBuf>,
}

impl Evaluator<'_> {
    fn evaluate(&self, index: usize, values: &[f64]) -> EvalRecord {
        let id = scenario_id(self.setup.algorithm.name, index);
        let decoded = unflatten(&self.vector.with_values(values.to_vec()), &self.setup.template)
            .expect("vector layout comes from the template");
        let mut config = decoded.config;
        config.scenario_id = id.clone();
        let options = RunOptions {
            dt: self.setup.dt,
            seed: self.setup.seed.wrapping_add(index as u64),
            spawn_jitter: 0.0,
            params: VehicleParams::default(),
        };
        let mut record = EvalRecord {
            index,
            scenario_id: id,
            values: values.to_vec(),
            config: config.clone(),
            feedback: None,
            rejected: Vec::new(),
        };
        match run_scenario(&config, &self.setup.map, self.sessions.as_ref(), &self.setup.oracles, &options) {
            Ok(rec) => {
                record.feedback = Some(feedback_from(&rec, &self.mission, &options.params));
                if let Some(dir) = &self.recordings {
                    let persisted = if self.setup.save_traffic_recording { rec } else { rec.summary() };
                    match write_recording(&persisted, dir) {
                        Ok(_) => {}
                        Err(RecordingError::Exists { path }) => {
                            tracing::debug!("keeping existing recording {}", path.display())
                        }
                        Err(e) => tracing::warn!("recording not written: {e}"),
                    }
                }
            }
            Err(crate::runner::RunError::Invalid(v)) => {
                record.rejected = v.iter().map(|x| x.to_string()).collect();
            }
            Err(e) => record.rejected = vec![e.to_string()],
        }
        record
    }
}

/// Evaluates `jobs` on up to `workers` threads. Each finished job is handed
/// to `on_done` on the calling thread, in completion order. Workers stop
/// taking new jobs once `halt(job_index)` returns true.
pub fn run_pool<J: Sync, R: Send>(
    jobs: &[J],
    workers: usize,
    work: impl Fn(&J) -> R + Sync,
    halt: impl Fn(usize) -> bool + Sync,
    mut on_done: impl FnMut(usize, R),
) {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len()) {
            let tx = tx.clone();
            let (next, work, halt) = (&next, &work, &halt);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || halt(i) {
                    break;
                }
                if tx.send((i, work(&jobs[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            on_done(i, r);
        }
    });
}

fn setup_digest(setup: &CampaignSetup) -> String {
    #[derive(Serialize)]
    struct Shape<'a> {
        algorithm: &'a AlgorithmParams,
        template: &'a ScenarioConfig,
        space: &'a MutationSpace,
        oracles: &'a OracleConfig,
        dt: f64,
        max_evals: Option<usize>,
    }
    canonical::sha256_hex(&Shape {
        algorithm: &setup.algorithm,
        template: &setup.template,
        space: &setup.space,
        oracles: &setup.oracles,
        dt: setup.dt,
        max_evals: setup.max_evals,
    })
    .expect("setup serializes")
}

pub fn read_state(path: &Path) -> Result<CampaignState, CampaignError> {
    let text = fs::read_to_string(path).map_err(|source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CampaignError::CorruptState {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CampaignError> {
    let io_err = |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Runs a campaign to budget exhaustion or interruption.
pub fn run_campaign(setup: &CampaignSetup) -> Result<CampaignResult, CampaignError> {
    setup.algorithm.validate()?;
    let violations = crate::scenario::validate(&setup.template, &setup.map);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CampaignError::Template(text.join("; ")));
    }
    let vector = flatten(&setup.template, &setup.map, &setup.space)?;
    let mission = EgoMission::resolve(&setup.template.ego, &setup.map)?;
    let sessions = setup.agent.sessions(&mission);
    drop(sessions.open()?);

    let digest = setup_digest(setup);
    let state_path = setup.run_dir.as_ref().map(|d| d.join(STATE_FILE));
    if let Some(dir) = &setup.run_dir {
        fs::create_dir_all(dir.join(RECORDINGS_DIR)).map_err(|source| CampaignError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let prior = match (&state_path, setup.resume) {
        (Some(p), true) if p.exists() => {
            let st = read_state(p)?;
            if st.algorithm != setup.algorithm.name || st.seed != setup.seed || st.setup_digest != digest {
                return Err(CampaignError::ResumeMismatch(format!(
                    "{} was written by a different configuration or seed",
                    p.display()
                )));
            }
            Some(st)
        }
        _ => None,
    };
    let (cached, cached_times, base_elapsed) = match prior {
        Some(st) => (st.log, st.completion_times, st.elapsed_seconds),
        None => (Vec::new(), Vec::new(), 0.0),
    };
    if !cached.is_empty() {
        tracing::info!("resuming after {} logged evaluations", cached.len());
    }

    let evaluator = Evaluator {
        setup,
        vector: vector.clone(),
        mission,
        sessions,
        recordings: setup.run_dir.as_ref().map(|d| d.join(RECORDINGS_DIR)),
    };
    let budget = BudgetHint {
        max_evals: setup.max_evals,
        run_seconds: setup.algorithm.run_seconds(),
    };
    let mut algorithm = build_algorithm(&setup.algorithm, SearchSpace::from_vector(&vector), budget, setup.seed);

    let started = Instant::now();
    let elapsed = || base_elapsed + started.elapsed().as_secs_f64();
    let stop_requested = || setup.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));
    let mut state = CampaignState {
        format: STATE_FORMAT,
        algorithm: setup.algorithm.name,
        seed: setup.seed,
        setup_digest: digest,
        elapsed_seconds: base_elapsed,
        completion_times: Vec::new(),
        log: Vec::new(),
        finished: false,
    };
    let checkpoint = |state: &mut CampaignState| -> Result<(), CampaignError> {
        state.elapsed_seconds = state.elapsed_seconds.max(elapsed());
        match &state_path {
            Some(p) => write_atomic(p, &canonical::to_vec(state).expect("state serializes")),
            None => Ok(()),
        }
    };

    let mut interrupted = false;
    loop {
        let done = state.log.len();
        let live = done >= cached.len();
        if setup.max_evals.is_some_and(|m| done >= m) {
            break;
        }
        if live && (elapsed() >= budget.run_seconds) {
            break;
        }
        if live && (stop_requested() || setup.halt_after.is_some_and(|h| done >= h)) {
            interrupted = true;
            break;
        }
        let mut batch = algorithm.propose();
        if let Some(m) = setup.max_evals {
            batch.truncate(m - done);
        }

        let mut results: Vec<Option<(EvalRecord, f64)>> = vec![None; batch.len()];
        let mut jobs = Vec::new();
        for (k, values) in batch.iter().enumerate() {
            let index = done + k;
            match cached.get(index) {
                Some(rec) => {
                    let same = rec.values.len() == values.len()
                        && rec.values.iter().zip(values).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        return Err(CampaignError::ResumeMismatch(format!(
                            "replayed proposal {index} differs from the logged one"
                        )));
                    }
                    results[k] = Some((rec.clone(), cached_times.get(index).copied().unwrap_or(0.0)));
                }
                None => jobs.push((k, index, values.clone())),
            }
        }

        // cached entries form a prefix of the batch; extend the log with it
        let mut flushed = 0;
        let mut failure = None;
        let flush = |results: &mut Vec<Option<(EvalRecord, f64)>>, state: &mut CampaignState, flushed: &mut usize| {
            let before = *flushed;
            while *flushed < results.len() {
                let Some((rec, t)) = results[*flushed].clone() else { break };
                state.log.push(rec);
                state.completion_times.push(t);
                *flushed += 1;
            }
            *flushed > before
        };
        flush(&mut results, &mut state, &mut flushed);

        let halt = |job: usize| {
            let index = jobs[job].1;
            stop_requested()
                || setup.halt_after.is_some_and(|h| index >= h)
                || (setup.max_evals.is_none() && elapsed() >= budget.run_seconds)
        };
        run_pool(
            &jobs,
            setup.workers,
            |(_, index, values)| evaluator.evaluate(*index, values),
            halt,
            |job, rec| {
                let slot = jobs[job].0;
                results[slot] = Some((rec, elapsed()));
                if flush(&mut results, &mut state, &mut flushed) {
                    if let Err(e) = checkpoint(&mut state) {
                        failure.get_or_insert(e);
                    }
                }
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }

        let observed: Vec<(Vec<f64>, Observation)> = results
            .iter()
            .take(flushed)
            .map(|r| {
                let (rec, t) = r.as_ref().expect("flushed slots are filled");
                (rec.values.clone(), rec.observation(*t))
            })
            .collect();
        algorithm.observe(&observed);
        if flushed < batch.len() {
            interrupted = stop_requested() || setup.halt_after.is_some();
            break;
        }
    }

    state.finished = !interrupted;
    checkpoint(&mut state)?;
    let report = CampaignReport::from_log(setup.algorithm.name, setup.seed, &state.log, elapsed(), interrupted);
    if let Some(dir) = &setup.run_dir {
        write_atomic(&dir.join(REPORT_FILE), &canonical::to_vec(&report).expect("report serializes"))?;
    }
    Ok(CampaignResult { report, state })
}
