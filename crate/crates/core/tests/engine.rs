use uchain::agent::AgentMode;
use uchain::engine::run_scenario;
use uchain::error::ConfigError;
use uchain::metrics::TickRecord;
use uchain::oracle::maximin_oracle;
use uchain::radio::RadioParams;
use uchain::scenario::{HeadProfile, ScenarioConfig, StartSpec, Variant};
use uchain::World;

fn events(log: &str) -> Vec<&str> {
    log.lines().filter_map(|l| l.rsplit(',').next()).filter(|e| !e.is_empty()).collect()
}

#[test]
fn idle_world_only_advances_the_clock() {
    let mut cfg = ScenarioConfig {
        agent_count: 2,
        head: HeadProfile::Hold,
        radio: RadioParams::noiseless(),
        ..ScenarioConfig::default()
    };
    cfg.start = StartSpec::Exploration;
    let mut w = World::new(&cfg, Variant::K, 1).unwrap();
    w.step();
    let before = w.agents().to_vec();
    let tick = w.tick();
    w.step();
    assert_eq!(w.tick(), tick + 1);
    for (a, b) in before.iter().zip(w.agents()) {
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.mode, b.mode);
        assert_eq!(a.base_link.map(|e| e.r_hat), b.base_link.map(|e| e.r_hat));
    }
}

#[test]
fn random_start_equalizes_within_two_minutes() {
    let cfg = ScenarioConfig {
        agent_count: 6,
        head: HeadProfile::Hold,
        start: StartSpec::Random { head_abscissa: Some(30.0), min_separation: 0.5 },
        radio: RadioParams { s_min: -60.0, ..RadioParams::noiseless() },
        horizon_s: 120.0,
        ..ScenarioConfig::default()
    };
    for seed in 0..10 {
        let mut w = World::new(&cfg, Variant::K, seed).unwrap();
        w.run_until(cfg.horizon_s);
        for a in w.agents().iter().filter(|a| a.mode.is_relay()) {
            assert!(a.r_diff.abs() <= w.policy().tolerance, "seed {seed}: {}", a.r_diff);
        }
    }
}

/// Longest run of consecutive ticks, in seconds, with some active link
/// below `s_min`.
fn longest_dip(trace: &[TickRecord], s_min: f64) -> f64 {
    let mut run = 0usize;
    let mut worst = 0usize;
    for r in trace {
        if r.min_true_quality().is_some_and(|q| q < s_min) {
            run += 1;
            worst = worst.max(run);
        } else {
            run = 0;
        }
    }
    worst as f64 * 0.2
}

#[test]
fn scripted_exploration_launches_and_keeps_links_up() {
    let cfg = ScenarioConfig::bundled("fig3_variants").unwrap();
    for seed in 0..10 {
        let out = run_scenario(&cfg, Variant::K, seed).unwrap();
        let m = &out.metrics;
        let early = m.launches.iter().filter(|(t, _)| *t < 50.0).count();
        assert!(early >= 2, "seed {seed}: launches {:?}", m.launches);
        let dip = longest_dip(&m.trace, cfg.radio.s_min);
        assert!(dip < 2.0, "seed {seed}: dip of {dip} s");
        assert!(m.faults.is_empty(), "seed {seed}: {:?}", m.faults);
    }
}

#[test]
fn launches_stop_at_the_fewest_relays_that_clear_the_margin() {
    // noiseless so the launch thresholds are crisp
    let mut cfg = ScenarioConfig::bundled("fig3_variants").unwrap();
    cfg.radio = RadioParams::noiseless();
    let out = run_scenario(&cfg, Variant::K, 1).unwrap();
    let end = out.metrics.trace.last().unwrap();
    let head = end.abscissae[0].1;
    let relays = end.abscissae.len() - 2;
    let env = cfg.environment().unwrap();
    let floor = cfg.radio.s_min + cfg.policy.launch_margin;
    let minimal = (1..10)
        .find(|&links| {
            maximin_oracle(&env, &RadioParams::noiseless(), head, links)
                .map(|s| s.value >= floor)
                .unwrap_or(false)
        })
        .unwrap()
        - 1;
    assert_eq!(relays, minimal, "head at {head:.2}");
}

#[test]
fn weakest_link_never_drops_once_launches_are_over() {
    let mut cfg = ScenarioConfig::bundled("fig3_variants").unwrap();
    cfg.radio = RadioParams::noiseless();
    let out = run_scenario(&cfg, Variant::K, 1).unwrap();
    let m = &out.metrics;
    let settle = m.launches.last().unwrap().0.max(50.0) + 2.0;
    let mins: Vec<f64> = m
        .trace
        .iter()
        .filter(|r| r.time_s > settle)
        .filter_map(|r| r.min_true_quality())
        .collect();
    assert!(mins.len() > 100);
    for w in mins.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn head_holds_back_when_its_uplink_weakens() {
    let cfg = ScenarioConfig {
        agent_count: 2,
        head: HeadProfile::Scripted { speed: 0.2, duration_s: 100.0 },
        ..ScenarioConfig::default()
    };
    let mut w = World::new(&cfg, Variant::K, 5).unwrap();
    let mut furthest: f64 = 0.0;
    for _ in 0..500 {
        w.step();
        furthest = furthest.max(w.agents()[0].abscissa);
    }
    // quality falls to s_min = -18 at 10^(18/20) m
    let limit = 10f64.powf(18.0 / 20.0);
    assert!(furthest < limit + 1.0, "{furthest}");
    assert!(furthest > limit - 3.0, "{furthest}");
}

#[test]
fn relay_with_a_dead_uplink_retreats_then_resumes() {
    let cfg = ScenarioConfig {
        agent_count: 3,
        head: HeadProfile::Hold,
        start: StartSpec::Random { head_abscissa: Some(12.0), min_separation: 0.5 },
        ..ScenarioConfig::default()
    };
    let mut w = World::new(&cfg, Variant::K, 2).unwrap();
    // 11 m from the base the uplink is gated
    w.place_agent(1, 11.0);
    w.run_until(60.0);
    let ev = events(w.event_log());
    let out = ev.iter().position(|e| *e == "mode:relaying->retreating").expect("retreat");
    let back = ev.iter().position(|e| *e == "mode:retreating->relaying").expect("resume");
    assert!(out < back);
    assert_eq!(w.agents()[1].mode, AgentMode::Relaying);
    assert!(w.agents()[1].abscissa < 9.0);
}

#[test]
fn order_violation_is_logged_not_fatal() {
    let cfg = ScenarioConfig {
        agent_count: 4,
        head: HeadProfile::Hold,
        start: StartSpec::Random { head_abscissa: Some(12.0), min_separation: 0.5 },
        radio: RadioParams { s_min: -60.0, ..RadioParams::default() },
        ..ScenarioConfig::default()
    };
    let mut w = World::new(&cfg, Variant::K, 2).unwrap();
    w.place_agent(1, 3.0);
    w.place_agent(2, 8.0);
    w.step();
    assert!(w.faults().iter().any(|f| f.kind == "order" && f.agent == 1));
    assert!(w.event_log().contains("fault:order"));
    w.run_until(5.0);
}

#[test]
fn missing_environment_fails_at_startup() {
    let cfg = ScenarioConfig {
        environment: "no/such/map.toml".into(),
        ..ScenarioConfig::default()
    };
    assert!(matches!(World::new(&cfg, Variant::K, 1), Err(ConfigError::UnknownEnvironment(_))));
}

#[test]
fn manual_launch_only_on_request() {
    let cfg = ScenarioConfig {
        manual_launch: true,
        ..ScenarioConfig::default()
    };
    let mut w = World::new(&cfg, Variant::K, 1).unwrap();
    w.run_until(60.0);
    assert!(w.agents().iter().filter(|a| a.mode == AgentMode::Idle).count() == 3);
    assert_eq!(w.request_launch(), Some(1));
    assert_eq!(w.request_launch(), None);
    w.run_until(63.0);
    assert_eq!(w.agents()[1].mode, AgentMode::Relaying);
    assert!(w.chain().contains(&1));

    let mut auto = World::new(&ScenarioConfig::default(), Variant::K, 1).unwrap();
    assert_eq!(auto.request_launch(), None);
}

#[test]
fn log_has_a_row_per_chain_member_each_tick() {
    let cfg = ScenarioConfig::bundled("fig3_variants").unwrap();
    let out = run_scenario(&cfg, Variant::T0, 9).unwrap();
    let lines: Vec<&str> = out.event_log.lines().collect();
    assert_eq!(lines[0], uchain::engine::CSV_HEADER);
    let tick1: Vec<&str> = lines.iter().copied().filter(|l| l.starts_with("1,")).collect();
    // head and base at first; no events on the first tick
    assert_eq!(tick1.len(), 2);
    assert!(tick1[0].starts_with("1,0.2,0,head,"));
    for l in &lines {
        assert_eq!(l.split(',').count(), 12, "{l}");
    }
}
