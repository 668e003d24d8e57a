use proptest::prelude::*;

use uchain::scenario::{HeadProfile, ScenarioConfig, StartSpec, Variant};
use uchain::World;
use uchain_telemetry::protocol::{AgentView, ErrorFrame, LinkView};
use uchain_telemetry::{decode, encode, Action, Hello, Message, PilotCommand, Snapshot};

fn chain_world() -> World {
    let cfg = ScenarioConfig {
        agent_count: 5,
        head: HeadProfile::Hold,
        start: StartSpec::Random { head_abscissa: Some(12.0), min_separation: 0.5 },
        ..ScenarioConfig::default()
    };
    let mut w = World::new(&cfg, Variant::K, 3).unwrap();
    w.step();
    w
}

fn samples() -> Vec<Message> {
    let w = chain_world();
    vec![
        Message::Hello(Hello::new(w.env(), false)),
        Message::Snapshot(Snapshot::of(&w, 7)),
        Message::Snapshot(Snapshot {
            seq: 1,
            tick: 0,
            time: 0.0,
            agents: vec![AgentView {
                id: 0,
                mode: "head".into(),
                pos: [0.1, -0.2],
                heading: std::f64::consts::PI,
                abscissa: 0.1,
                velocity: -0.2,
            }],
            links: vec![LinkView {
                head_side: 0,
                base_side: 1,
                raw: None,
                filtered: Some(-3.25),
                s_min: -18.0,
            }],
        }),
        Message::Command(PilotCommand {
            action: Action::Forward,
            issuer: "pilot-1".into(),
            timestamp: 1.7e12,
        }),
        Message::Command(PilotCommand {
            action: Action::Backward,
            issuer: "".into(),
            timestamp: 0.0,
        }),
        Message::Command(PilotCommand {
            action: Action::Stop,
            issuer: "k".into(),
            timestamp: 12.5,
        }),
        Message::Command(PilotCommand {
            action: Action::LaunchOverride,
            issuer: "k".into(),
            timestamp: 13.0,
        }),
        Message::Error(ErrorFrame::new("malformed", "bad \"quote\"")),
    ]
}

#[test]
fn every_variant_round_trips() {
    for m in samples() {
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }
}

#[test]
fn five_agent_snapshot_keeps_its_counts() {
    let w = chain_world();
    let Message::Snapshot(s) = decode(&encode(&Message::Snapshot(Snapshot::of(&w, 1)))).unwrap() else {
        panic!("not a snapshot");
    };
    assert_eq!(s.agents.len(), 5);
    assert_eq!(s.links.len(), 4);
}

#[test]
fn hello_carries_the_map() {
    let w = chain_world();
    let h = Hello::new(w.env(), true);
    assert_eq!(h.walls.len(), w.env().walls.len());
    assert_eq!(h.centerline.len(), w.env().centerline.points().len());
    assert!(h.manual_launch);
}

proptest! {
    #[test]
    fn truncated_frames_fail_cleanly(which in 0usize..8, frac in 0.0f64..1.0) {
        let text = encode(&samples()[which]);
        let cut = ((text.len() as f64) * frac) as usize;
        prop_assume!(cut < text.len());
        prop_assert!(decode(&text[..cut]).is_err());
    }

    #[test]
    fn arbitrary_text_never_panics(s in ".{0,200}") {
        let _ = decode(&s);
    }
}
