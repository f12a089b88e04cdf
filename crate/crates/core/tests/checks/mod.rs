//! Criterion-level checks shared by the acceptance harness and the
//! integration tests. Each returns a one-line detail on success.

#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenofuzz_core::bridge::{
    decode, serve, AgentSession, BridgeError, ControlMessage, EgoAgentConfig, Endpoint, EndpointSessions,
    InProcessSessions, LockstepStats, PerceptionMessage, ReferenceAgent, SessionFactory, DEFAULT_TIMEOUT,
};
use scenofuzz_core::config::load_config;
use scenofuzz_core::engine::algorithms::AvFuzzer;
use scenofuzz_core::engine::campaign::{
    log_bytes, run_campaign, AgentChoice, AgentSettings, CampaignSetup, EvalRecord,
};
use scenofuzz_core::engine::operators::{gaussian_mutation, one_point_crossover, uniform_sample};
use scenofuzz_core::engine::search::{
    build_algorithm, optimize, AlgorithmName, AlgorithmParams, BudgetHint, Observation, SearchAlgorithm, SearchSpace,
};
use scenofuzz_core::engine::surrogate::IdwSurrogate;
use scenofuzz_core::geometry::Pose;
use scenofuzz_core::map::{bundled_map, LaneMap};
use scenofuzz_core::runner::{run_scenario, OracleConfig, Outcome, RunOptions, ScenarioRecording};
use scenofuzz_core::scenario::{flatten, unflatten, Bounds, EgoMission, MutationSpace, ScenarioConfig};
use scenofuzz_core::sim::{obb_distance, step_kinematic, ActorKind, ActorState, BodyDims, ControlCommand, VehicleParams};
use scenofuzz_core::templates::bundled_template;

pub type Check = Result<String, String>;

pub const FIXTURE_MAP: &str = "borregas_ave_lite";

pub fn fixture(name: &str) -> (ScenarioConfig, LaneMap) {
    let map = bundled_map(FIXTURE_MAP).expect("bundled map");
    let cfg = bundled_template(name, &map).expect("bundled template");
    (cfg, map)
}

pub fn junction_setup(name: AlgorithmName, seed: u64, max_evals: usize) -> CampaignSetup {
    let (template, map) = fixture("junction");
    let mut setup = CampaignSetup::new(AlgorithmParams::new(name), template, map);
    setup.seed = seed;
    setup.max_evals = Some(max_evals);
    setup.workers = 1;
    setup
}

pub fn faulty_agent() -> AgentChoice {
    AgentChoice::Reference(AgentSettings {
        fault_ignore_junction_traffic: true,
        ..AgentSettings::default()
    })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 -------------------------------------------------------------------------

pub fn determinism() -> Check {
    let mut worst = Duration::ZERO;
    for name in AlgorithmName::ALL {
        let start = Instant::now();
        let a = run_campaign(&junction_setup(name, 11, 20)).map_err(|e| e.to_string())?;
        let b = run_campaign(&junction_setup(name, 11, 20)).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        worst = worst.max(took);
        ensure(a.state.log.len() == 20, || format!("{name}: {} evaluations", a.state.log.len()))?;
        ensure(log_bytes(&a.state.log) == log_bytes(&b.state.log), || format!("{name}: logs differ"))?;
        ensure(a.report.deterministic_bytes() == b.report.deterministic_bytes(), || {
            format!("{name}: reports differ")
        })?;
        ensure(took < Duration::from_secs(120), || format!("{name}: {took:?} for two runs"))?;
    }
    Ok(format!("5 algorithms x 2 runs byte-identical; slowest pair {:.1}s", worst.as_secs_f64()))
}

// 2 -------------------------------------------------------------------------

pub const CIRCLE_STEER: f64 = 0.1;
pub const CIRCLE_SPEED: f64 = 5.0;

/// Positions of a vehicle held at constant speed and steering.
pub fn circle_track(dt: f64, duration: f64) -> Vec<(f64, f64)> {
    let params = VehicleParams::default();
    let mut state = ActorState::new("ego", ActorKind::Ego, Pose::new(0.0, 0.0, 0.0), BodyDims::CAR);
    state.speed = CIRCLE_SPEED;
    let cmd = ControlCommand {
        throttle: params.cruise_throttle(CIRCLE_SPEED),
        brake: 0.0,
        steering: CIRCLE_STEER,
    };
    let steps = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((state.pose.x, state.pose.y));
    for _ in 0..steps {
        state = step_kinematic(&state, &cmd, &params, dt);
        out.push((state.pose.x, state.pose.y));
    }
    out
}

pub fn kinematics() -> Check {
    let wheelbase = VehicleParams::default().wheelbase;
    let analytic = wheelbase / CIRCLE_STEER.tan();
    let period = 2.0 * std::f64::consts::PI * analytic / CIRCLE_SPEED;
    let coarse = oracles::fit_circle_radius(&circle_track(0.1, period));
    let fine = oracles::fit_circle_radius(&circle_track(1e-4, period));
    let rel_analytic = (coarse - analytic).abs() / analytic;
    let rel_fine = (coarse - fine).abs() / fine;
    ensure(rel_analytic <= 0.02, || format!("radius {coarse:.3} vs analytic {analytic:.3}"))?;
    ensure(rel_fine <= 0.02, || format!("radius {coarse:.3} vs fine-step {fine:.3}"))?;
    let closure = {
        let t = circle_track(0.1, period);
        let (x, y) = *t.last().unwrap();
        x.hypot(y)
    };
    ensure(closure < 0.5, || format!("full circle misses start by {closure:.3} m"))?;
    let a = *circle_track(0.1, 30.0).last().unwrap();
    let b = *circle_track(0.05, 30.0).last().unwrap();
    let shift = (a.0 - b.0).hypot(a.1 - b.1);
    ensure(shift < 0.2, || format!("dt halving moves final position {shift:.3} m"))?;
    Ok(format!(
        "radius {coarse:.3} m (analytic {analytic:.3}, fine {fine:.3}); closure {closure:.3} m; dt-halving shift {shift:.3} m"
    ))
}

// 3 -------------------------------------------------------------------------

pub fn random_box<R: Rng>(id: &str, rng: &mut R) -> ActorState {
    let pose = Pose::new(
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let body = BodyDims {
        length: rng.gen_range(0.5..6.0),
        width: rng.gen_range(0.3..3.0),
    };
    ActorState::new(id, ActorKind::Npc, pose, body)
}

pub fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_sym, mut touching) = (0.0f64, 0.0f64, 0);
    for i in 0..1000 {
        let a = random_box("a", &mut rng);
        let b = random_box("b", &mut rng);
        let got = obb_distance(&a, &b);
        let expect = oracles::sampled_separation(&a, &b, 1e-3);
        let err = (got - expect).abs();
        worst = worst.max(err);
        if expect == 0.0 {
            touching += 1;
        }
        ensure(err <= 1e-3, || format!("pair {i}: {got} vs sampled {expect}"))?;
        let sym = (got - obb_distance(&b, &a)).abs();
        worst_sym = worst_sym.max(sym);
        ensure(sym <= 1e-12, || format!("pair {i}: asymmetric by {sym:e}"))?;
    }
    Ok(format!(
        "1000 pairs ({touching} overlapping); max error {worst:.2e} m; max asymmetry {worst_sym:.1e}"
    ))
}

// 4 -------------------------------------------------------------------------

/// Uniformly mutated variants of a bundled template.
pub fn fuzzed_configs(template: &str, count: usize, seed: u64) -> (Vec<ScenarioConfig>, LaneMap) {
    let (cfg, map) = fixture(template);
    let vector = flatten(&cfg, &map, &MutationSpace::default()).expect("flatten");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = (0..count)
        .map(|i| {
            let values = uniform_sample(&vector.bounds, &mut rng);
            let mut c = unflatten(&vector.with_values(values), &cfg).expect("unflatten").config;
            c.scenario_id = format!("{template}-fuzz-{i:03}");
            c
        })
        .collect();
    (configs, map)
}

pub fn reference_sessions(cfg: &ScenarioConfig, map: &LaneMap, faulty: bool) -> InProcessSessions {
    let mission = EgoMission::resolve(&cfg.ego, map).expect("mission");
    let mut agent = EgoAgentConfig::for_mission(&mission);
    agent.fault_ignore_junction_traffic = faulty;
    InProcessSessions::new(ReferenceAgent::factory(agent))
}

pub fn oracle_soundness() -> Check {
    let oracle = OracleConfig::default();
    let mut counts: BTreeMap<Outcome, usize> = BTreeMap::new();
    for (template, seed) in [("junction", 41), ("left_turn", 42)] {
        let (configs, map) = fuzzed_configs(template, 50, seed);
        for (i, cfg) in configs.iter().enumerate() {
            let sessions = reference_sessions(cfg, &map, i % 2 == 0);
            let rec = run_scenario(cfg, &map, &sessions, &oracle, &RunOptions::default()).map_err(|e| e.to_string())?;
            oracles::verify_recording(&rec, &map, &oracle).map_err(|e| format!("{}: {e}", cfg.scenario_id))?;
            *counts.entry(rec.verdict.outcome).or_insert(0) += 1;
        }
    }
    ensure(counts.get(&Outcome::CollisionViolation).copied().unwrap_or(0) > 0, || {
        format!("no collisions among fuzzed scenarios: {counts:?}")
    })?;
    ensure(counts.get(&Outcome::DestinationReached).copied().unwrap_or(0) > 0, || {
        format!("no arrivals among fuzzed scenarios: {counts:?}")
    })?;
    Ok(format!("100 recordings re-verified; outcomes {counts:?}"))
}

// 5 -------------------------------------------------------------------------

pub const DISCOVERY_BUDGET: usize = 200;

pub fn discovery() -> Check {
    let mut firsts = Vec::new();
    for name in AlgorithmName::ALL {
        let start = Instant::now();
        let mut per_seed = Vec::new();
        for seed in 0..5 {
            let mut setup = junction_setup(name, seed, DISCOVERY_BUDGET);
            setup.agent = faulty_agent();
            let result = run_campaign(&setup).map_err(|e| e.to_string())?;
            let first = result.state.log.iter().position(EvalRecord::is_violation);
            let Some(first) = first else {
                return Err(format!("{name} seed {seed}: no collision in {DISCOVERY_BUDGET} evaluations"));
            };
            per_seed.push(first + 1);
        }
        let took = start.elapsed();
        ensure(took < Duration::from_secs(600), || format!("{name}: {took:?}"))?;
        firsts.push(format!("{name} {per_seed:?}"));
    }
    Ok(format!("evaluations to first collision: {}", firsts.join("; ")))
}

// 6 -------------------------------------------------------------------------

pub fn operator_statistics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bounds = [Bounds::new(0.0, 1.0)];
    let draws = 10_000;
    let mutated: usize = (0..draws)
        .map(|_| gaussian_mutation(&[0.5], &bounds, 0.6, 0.1, &mut rng).1)
        .sum();
    let pm_rate = mutated as f64 / draws as f64;
    ensure((0.58..=0.62).contains(&pm_rate), || format!("mutation rate {pm_rate}"))?;
    let (a, b) = (vec![0.0; 6], vec![1.0; 6]);
    let crossed = (0..draws).filter(|_| one_point_crossover(&a, &b, 0.6, &mut rng).2).count();
    let pc_rate = crossed as f64 / draws as f64;
    ensure((0.57..=0.63).contains(&pc_rate), || format!("crossover rate {pc_rate}"))?;

    let params = AlgorithmParams::new(AlgorithmName::Avfuzzer);
    let budget = BudgetHint {
        max_evals: Some(400),
        run_seconds: params.run_seconds(),
    };
    let mut ga = AvFuzzer::new(&params, SearchSpace::unit(6), budget, 6);
    let mut evals = 0;
    while evals < 400 {
        let batch = ga.propose();
        evals += batch.len();
        let results: Vec<_> = batch.into_iter().map(|v| {
            let f = oracles::sphere(&v);
            (v, observation(f))
        }).collect();
        ga.observe(&results);
        ensure(ga.population().len() == params.population_size, || {
            format!("population {} after {evals} evaluations", ga.population().len())
        })?;
    }
    let sizes = ga.generation_sizes();
    ensure(sizes.iter().all(|&n| n == params.population_size), || format!("generation sizes {sizes:?}"))?;
    Ok(format!(
        "mutation {pm_rate:.4}, crossover {pc_rate:.4}; {} generations all of size {} ({} local phases)",
        sizes.len(),
        params.population_size,
        ga.local_phases()
    ))
}

pub fn observation(fitness: f64) -> Observation {
    Observation {
        fitness,
        behavior: Vec::new(),
        quality: 0.0,
        violation: false,
        elapsed: 0.0,
    }
}

// 7 -------------------------------------------------------------------------

pub const LANDSCAPE_DIM: usize = 6;
pub const LANDSCAPE_TARGET: f64 = 0.1;
const LANDSCAPE_CAP: usize = 5000;

/// Evaluations until `name` first scores below the target on a quadratic
/// bowl centred at a seed-dependent point.
pub fn evaluations_to_target(name: AlgorithmName, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let centre: Vec<f64> = (0..LANDSCAPE_DIM).map(|_| rng.gen_range(0.2..0.8)).collect();
    let params = AlgorithmParams::new(name);
    let budget = BudgetHint {
        max_evals: Some(LANDSCAPE_CAP),
        run_seconds: params.run_seconds(),
    };
    let mut alg: Box<dyn SearchAlgorithm> = build_algorithm(&params, SearchSpace::unit(LANDSCAPE_DIM), budget, seed);
    let series = optimize(
        alg.as_mut(),
        |x| observation(x.iter().zip(&centre).map(|(a, c)| (a - c) * (a - c)).sum()),
        LANDSCAPE_CAP,
        |o| o.fitness < LANDSCAPE_TARGET,
    );
    series.len()
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn surrogate_sanity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..50 {
        let n = rng.gen_range(2..30);
        let d = rng.gen_range(1..6);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let model = IdwSurrogate::fit(points.clone(), values.clone());
        for (p, v) in points.iter().zip(&values) {
            // duplicates cannot occur with continuous draws
            ensure(model.predict(p) == *v, || format!("trial {trial}: not exact at a site"))?;
        }
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        for _ in 0..200 {
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let y = model.predict(&q);
            ensure((lo..=hi).contains(&y), || format!("trial {trial}: {y} outside [{lo}, {hi}]"))?;
        }
    }
    let guided = median((0..10).map(|s| evaluations_to_target(AlgorithmName::Samota, s)).collect());
    let random = median((0..10).map(|s| evaluations_to_target(AlgorithmName::Random, s)).collect());
    ensure(guided <= 0.5 * random, || format!("surrogate median {guided} vs random {random}"))?;
    Ok(format!(
        "exact and bounded on 50 random datasets; median evaluations to f<{LANDSCAPE_TARGET}: surrogate {guided} vs random {random}"
    ))
}

// 8 -------------------------------------------------------------------------

/// Wraps a session factory and records any breach of strict alternation.
pub struct Lockstep<F> {
    pub inner: F,
    pub breaches: Arc<std::sync::Mutex<Vec<String>>>,
    pub exchanges: Arc<std::sync::atomic::AtomicU64>,
}

impl<F> Lockstep<F> {
    pub fn new(inner: F) -> Self {
        Lockstep {
            inner,
            breaches: Arc::default(),
            exchanges: Arc::default(),
        }
    }
}

struct CheckedSession {
    inner: Box<dyn AgentSession>,
    breaches: Arc<std::sync::Mutex<Vec<String>>>,
    exchanges: Arc<std::sync::atomic::AtomicU64>,
}

impl AgentSession for CheckedSession {
    fn exchange(&mut self, perception: &PerceptionMessage) -> Result<ControlMessage, BridgeError> {
        let before = self.inner.stats();
        let reply = self.inner.exchange(perception)?;
        let after = self.inner.stats();
        self.exchanges.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let mut breaches = self.breaches.lock().unwrap();
        if before.outstanding() != 0 || after.outstanding() != 0 {
            breaches.push(format!("outstanding messages at t={}", perception.sim_time));
        }
        if after.perception_sent != before.perception_sent + 1 || after.control_received != before.control_received + 1 {
            breaches.push(format!("counters skipped at t={}", perception.sim_time));
        }
        if reply.sim_time != perception.sim_time {
            breaches.push(format!("reply for t={} answered t={}", reply.sim_time, perception.sim_time));
        }
        Ok(reply)
    }

    fn stats(&self) -> LockstepStats {
        self.inner.stats()
    }
}

impl<F: SessionFactory> SessionFactory for Lockstep<F> {
    fn open(&self) -> Result<Box<dyn AgentSession>, BridgeError> {
        Ok(Box::new(CheckedSession {
            inner: self.inner.open()?,
            breaches: self.breaches.clone(),
            exchanges: self.exchanges.clone(),
        }))
    }
}

/// Runs `cfg` once in process and once over loopback TCP.
pub fn transport_pair(cfg: &ScenarioConfig, map: &LaneMap) -> Result<(ScenarioRecording, ScenarioRecording, Vec<String>), String> {
    let mission = EgoMission::resolve(&cfg.ego, map).map_err(|e| e.to_string())?;
    let factory = ReferenceAgent::factory(EgoAgentConfig::for_mission(&mission));
    let oracle = OracleConfig::default();
    let options = RunOptions::default();
    let local = Lockstep::new(InProcessSessions::new(factory.clone()));
    let a = run_scenario(cfg, map, &local, &oracle, &options).map_err(|e| e.to_string())?;
    let server = serve(&Endpoint::Tcp("127.0.0.1:0".into()), factory).map_err(|e| e.to_string())?;
    let remote = Lockstep::new(EndpointSessions {
        endpoint: server.endpoint().clone(),
        timeout: DEFAULT_TIMEOUT,
    });
    let b = run_scenario(cfg, map, &remote, &oracle, &options).map_err(|e| e.to_string())?;
    server.shutdown();
    let mut breaches = local.breaches.lock().unwrap().clone();
    breaches.extend(remote.breaches.lock().unwrap().iter().cloned());
    let frames = (a.frames.len() + b.frames.len()) as u64;
    let exchanged = local.exchanges.load(std::sync::atomic::Ordering::SeqCst)
        + remote.exchanges.load(std::sync::atomic::Ordering::SeqCst);
    if exchanged != frames {
        breaches.push(format!("{exchanged} exchanges for {frames} frames"));
    }
    Ok((a, b, breaches))
}

/// Random byte strings, some with plausible headers, fed to `decode`.
pub fn decode_fuzz(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    for i in 0..count {
        let len = rng.gen_range(0..64);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if i % 3 == 0 && bytes.len() >= 4 {
            let body = (bytes.len() - 4) as u32;
            bytes[..4].copy_from_slice(&body.to_be_bytes());
        }
        if i % 5 == 0 {
            let body = br#"{"brake":0.0,"sim_time":1.0,"steering":0.25,"throttle":0.5,"type":"control"}"#;
            bytes = (body.len() as u32).to_be_bytes().to_vec();
            bytes.extend_from_slice(body);
            let flip = rng.gen_range(0..bytes.len());
            bytes[flip] ^= 1 << rng.gen_range(0..8);
        }
        match std::panic::catch_unwind(|| decode(&bytes)) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
            Err(_) => return Err(format!("decode panicked on input {i}: {bytes:02x?}")),
        }
    }
    Ok(accepted)
}

pub fn bridge_conformance() -> Check {
    let (cfg, map) = fixture("junction");
    let (a, b, breaches) = transport_pair(&cfg, &map)?;
    ensure(a.deterministic_bytes() == b.deterministic_bytes(), || {
        "in-process and TCP recordings differ".to_string()
    })?;
    ensure(breaches.is_empty(), || format!("lockstep breaches: {breaches:?}"))?;
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let fuzz = decode_fuzz(10_000, 8);
    std::panic::set_hook(hook);
    let accepted = fuzz?;
    Ok(format!(
        "{} frames identical over both transports; 10000 fuzzed frames decoded without panic ({accepted} accepted)",
        a.frames.len()
    ))
}

// 9 -------------------------------------------------------------------------

pub const RESUME_KILL_AT: usize = 7;
pub const RESUME_TOTAL: usize = 20;

pub fn resume(work: &Path) -> Check {
    let mut results = Vec::new();
    for name in [AlgorithmName::Avfuzzer, AlgorithmName::Samota] {
        let straight_dir = work.join(format!("{name}-straight"));
        let resumed_dir = work.join(format!("{name}-resumed"));
        let mut setup = junction_setup(name, 9, RESUME_TOTAL);
        setup.run_dir = Some(straight_dir);
        let straight = run_campaign(&setup).map_err(|e| e.to_string())?;

        setup.run_dir = Some(resumed_dir.clone());
        setup.halt_after = Some(RESUME_KILL_AT);
        let killed = run_campaign(&setup).map_err(|e| e.to_string())?;
        ensure(killed.report.interrupted && killed.state.log.len() == RESUME_KILL_AT, || {
            format!("{name}: interrupted run logged {}", killed.state.log.len())
        })?;
        let recordings = resumed_dir.join("recordings");
        let before = oracles::snapshot_dir(&recordings);

        setup.halt_after = None;
        setup.resume = true;
        let resumed = run_campaign(&setup).map_err(|e| e.to_string())?;
        ensure(log_bytes(&resumed.state.log) == log_bytes(&straight.state.log), || {
            format!("{name}: resumed log differs from the uninterrupted one")
        })?;
        let after = oracles::snapshot_dir(&recordings);
        for (file, bytes) in &before {
            ensure(after.get(file) == Some(bytes), || format!("{name}: {file} was rewritten"))?;
        }
        ensure(after.len() == RESUME_TOTAL, || format!("{name}: {} recordings after resume", after.len()))?;
        results.push(name.to_string());
    }
    Ok(format!(
        "{}: killed at {RESUME_KILL_AT}, resumed to {RESUME_TOTAL}, logs identical, recordings untouched",
        results.join(", ")
    ))
}

// 10 ------------------------------------------------------------------------

/// Splits a campaign log into the batches its strategy proposed.
pub fn batches(setup: &CampaignSetup, log: &[EvalRecord]) -> Result<Vec<Vec<EvalRecord>>, String> {
    let vector = flatten(&setup.template, &setup.map, &setup.space).map_err(|e| e.to_string())?;
    let budget = BudgetHint {
        max_evals: setup.max_evals,
        run_seconds: setup.algorithm.run_seconds(),
    };
    let mut alg = build_algorithm(&setup.algorithm, SearchSpace::from_vector(&vector), budget, setup.seed);
    let mut out = Vec::new();
    let mut at = 0;
    while at < log.len() {
        let batch = alg.propose();
        let n = batch.len().min(log.len() - at);
        let chunk = log[at..at + n].to_vec();
        let mut sorted_batch: Vec<Vec<u64>> = batch[..n].iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
        let mut sorted_chunk: Vec<Vec<u64>> = chunk.iter().map(|r| r.values.iter().map(|x| x.to_bits()).collect()).collect();
        sorted_batch.sort();
        sorted_chunk.sort();
        if sorted_batch != sorted_chunk {
            return Err(format!("batch starting at {at} does not match the proposal"));
        }
        let results: Vec<_> = batch[..n]
            .iter()
            .map(|v| {
                let r = chunk.iter().find(|r| &r.values == v).expect("matched above");
                (v.clone(), r.observation(0.0))
            })
            .collect();
        alg.observe(&results);
        out.push(chunk);
        at += n;
    }
    Ok(out)
}

fn config_multiset(batch: &[EvalRecord]) -> Vec<String> {
    let mut v: Vec<String> = batch
        .iter()
        .map(|r| {
            let mut c = r.config.clone();
            c.scenario_id.clear();
            scenofuzz_core::canonical::to_string(&c).expect("config serializes")
        })
        .collect();
    v.sort();
    v
}

pub fn parallel_soundness() -> Check {
    let serial_setup = junction_setup(AlgorithmName::Avfuzzer, 10, 40);
    let mut parallel_setup = serial_setup.clone();
    parallel_setup.workers = 4;
    let serial = run_campaign(&serial_setup).map_err(|e| e.to_string())?;
    let parallel = run_campaign(&parallel_setup).map_err(|e| e.to_string())?;
    let a = batches(&serial_setup, &serial.state.log)?;
    let b = batches(&parallel_setup, &parallel.state.log)?;
    ensure(a.len() == b.len(), || format!("{} vs {} generations", a.len(), b.len()))?;
    for (g, (x, y)) in a.iter().zip(&b).enumerate() {
        ensure(config_multiset(x) == config_multiset(y), || format!("generation {g} differs"))?;
    }
    Ok(format!(
        "{} generations, 40 evaluations: per-generation config multisets equal (logs byte-identical: {})",
        a.len(),
        log_bytes(&serial.state.log) == log_bytes(&parallel.state.log)
    ))
}

// 11 ------------------------------------------------------------------------

pub fn sample_config_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/avfuzzer.yaml")
}

pub fn config_fidelity() -> Check {
    let cfg = load_config(&sample_config_path()).map_err(|e| e.to_string())?;
    let p = &cfg.testing_engine.algorithm.parameters;
    let checks = [
        ("system.debug", cfg.system.debug),
        ("system.resume", cfg.system.resume),
        ("map_name", cfg.scenario.map_name == "borregas_ave"),
        ("start_lane_id", cfg.scenario.start_lane_id == "lane_31"),
        ("end_lane_id", cfg.scenario.end_lane_id == "lane_15"),
        ("runner", cfg.scenario_runner.name == "ApolloSim"),
        ("container_name", cfg.scenario_runner.parameters.container_name == Some(None)),
        ("save_traffic_recording", cfg.scenario_runner.parameters.save_traffic_recording),
        ("algorithm", cfg.testing_engine.algorithm.name == "avfuzzer"),
        ("run_hour", p.run_hour == 2.0),
        ("local_run_hour", p.local_run_hour == 0.5),
        ("population_size", p.population_size == 4),
        ("pm", p.pm == 0.6),
        ("pc", p.pc == 0.6),
        ("threshold", cfg.testing_engine.oracle.collision.threshold == 0.01),
    ];
    let wrong: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    ensure(wrong.is_empty(), || format!("values not recovered: {wrong:?}"))?;
    let params = cfg.algorithm_params().map_err(|e| e.to_string())?;
    ensure(params.name == AlgorithmName::Avfuzzer, || "algorithm not resolved".into())?;
    let setup = cfg.campaign_setup(None).map_err(|e| e.to_string())?;
    ensure(setup.oracles.collision_threshold == 0.01, || "threshold not applied".into())?;
    Ok(format!("{} listed values recovered exactly; campaign setup builds", checks.len()))
}
