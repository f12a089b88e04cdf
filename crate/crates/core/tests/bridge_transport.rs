mod checks;

use std::io::Write;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use checks::{fixture, transport_pair};
use scenofuzz_core::bridge::{
    decode, encode, read_frame, serve, ControlMessage, EgoAgent, EgoAgentConfig, Endpoint, EndpointSessions, FrameError,
    Message, PerceptionMessage, ReferenceAgent, HEADER_LEN,
};
use scenofuzz_core::geometry::Pose;
use scenofuzz_core::runner::{run_scenario, OracleConfig, Outcome, RunOptions};
use scenofuzz_core::scenario::EgoMission;
use scenofuzz_core::sim::{ActorKind, ActorState, BodyDims, ControlCommand};

fn actor_strategy() -> impl Strategy<Value = ActorState> {
    (
        "[a-z_0-9]{1,8}",
        -1e4f64..1e4,
        -1e4f64..1e4,
        -3.14f64..3.14,
        0.0f64..30.0,
        -6.0f64..3.0,
    )
        .prop_map(|(id, x, y, h, v, a)| {
            let mut s = ActorState::new(id, ActorKind::Npc, Pose::new(x, y, h), BodyDims::CAR);
            s.speed = v;
            s.acceleration = a;
            s
        })
}

proptest! {
    #[test]
    fn perception_frames_round_trip(t in 0.0f64..600.0, ego in actor_strategy(), obstacles in prop::collection::vec(actor_strategy(), 0..60)) {
        let mut ego = ego;
        ego.kind = ActorKind::Ego;
        let msg = Message::Perception(PerceptionMessage { sim_time: t, ego_state: ego, obstacles });
        let frame = encode(&msg);
        let body = u32::from_be_bytes(frame[..HEADER_LEN].try_into().unwrap()) as usize;
        prop_assert_eq!(frame.len(), HEADER_LEN + body);
        let (back, used) = decode(&frame).unwrap();
        prop_assert_eq!(used, frame.len());
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn every_truncation_is_reported(cut_fraction in 0.0f64..1.0) {
        let msg = Message::Control(ControlMessage { sim_time: 0.3, command: ControlCommand { throttle: 0.4, brake: 0.0, steering: -0.2 } });
        let frame = encode(&msg);
        let cut = ((frame.len() as f64) * cut_fraction) as usize;
        let is_truncated = matches!(decode(&frame[..cut]), Err(FrameError::Truncated { .. }));
        prop_assert!(is_truncated);
    }
}

#[test]
fn back_to_back_frames_decode_in_order() {
    let a = Message::Control(ControlMessage { sim_time: 0.1, command: ControlCommand::default() });
    let b = Message::Control(ControlMessage { sim_time: 0.2, command: ControlCommand { throttle: 1.0, brake: 0.0, steering: 0.0 } });
    let mut bytes = encode(&a);
    bytes.extend(encode(&b));
    let (first, used) = decode(&bytes).unwrap();
    let (second, rest) = decode(&bytes[used..]).unwrap();
    assert_eq!((first, second), (a, b));
    assert_eq!(used + rest, bytes.len());
}

#[test]
fn fuzzed_frames_never_panic() {
    let accepted = checks::decode_fuzz(20_000, 99).unwrap();
    assert!(accepted > 0, "bit flips never produced a valid frame");
}

#[test]
fn tcp_and_in_process_traces_are_identical() {
    for template in ["junction", "left_turn"] {
        let (cfg, map) = fixture(template);
        let (a, b, breaches) = transport_pair(&cfg, &map).unwrap();
        assert_eq!(a.deterministic_bytes(), b.deterministic_bytes(), "{template}");
        assert!(breaches.is_empty(), "{breaches:?}");
    }
}

#[test]
fn raw_client_gets_matching_reply() {
    let (cfg, map) = fixture("junction");
    let mission = EgoMission::resolve(&cfg.ego, &map).unwrap();
    let server = serve(&Endpoint::Tcp("127.0.0.1:0".into()), ReferenceAgent::factory(EgoAgentConfig::for_mission(&mission))).unwrap();
    let Endpoint::Tcp(addr) = server.endpoint().clone() else { panic!("tcp endpoint expected") };
    let mut stream = TcpStream::connect(addr).unwrap();
    let ego = ActorState::new("ego", ActorKind::Ego, mission.start_pose, BodyDims::CAR);
    for k in 0..5 {
        let t = k as f64 * 0.1;
        let msg = Message::Perception(PerceptionMessage { sim_time: t, ego_state: ego.clone(), obstacles: vec![] });
        stream.write_all(&encode(&msg)).unwrap();
        let reply = read_frame(&mut stream).unwrap().unwrap();
        match decode(&reply).unwrap().0 {
            Message::Control(c) => assert_eq!(c.sim_time, t),
            other => panic!("unexpected {other:?}"),
        }
    }
    drop(stream);
    server.shutdown();
}

struct Slow;

impl EgoAgent for Slow {
    fn respond(&mut self, p: &PerceptionMessage) -> ControlMessage {
        std::thread::sleep(Duration::from_millis(400));
        ControlMessage { sim_time: p.sim_time, command: ControlCommand::default() }
    }
}

struct WrongClock;

impl EgoAgent for WrongClock {
    fn respond(&mut self, p: &PerceptionMessage) -> ControlMessage {
        ControlMessage { sim_time: p.sim_time + 1.0, command: ControlCommand::default() }
    }
}

fn remote_outcome(factory: Arc<dyn scenofuzz_core::bridge::AgentFactory>) -> (Outcome, usize) {
    let (cfg, map) = fixture("junction");
    let server = serve(&Endpoint::Tcp("127.0.0.1:0".into()), factory).unwrap();
    let sessions = EndpointSessions { endpoint: server.endpoint().clone(), timeout: Duration::from_millis(100) };
    let rec = run_scenario(&cfg, &map, &sessions, &OracleConfig::default(), &RunOptions::default()).unwrap();
    server.shutdown();
    (rec.verdict.outcome, rec.frames.len())
}

#[test]
fn slow_remote_agent_times_out() {
    let (outcome, frames) = remote_outcome(Arc::new(|| Box::new(Slow) as Box<dyn EgoAgent>));
    assert_eq!(outcome, Outcome::AgentTimeout);
    assert_eq!(frames, 1);
}

#[test]
fn mismatched_reply_ends_the_run() {
    let (outcome, frames) = remote_outcome(Arc::new(|| Box::new(WrongClock) as Box<dyn EgoAgent>));
    assert_eq!(outcome, Outcome::AgentTimeout);
    assert_eq!(frames, 1);
}
