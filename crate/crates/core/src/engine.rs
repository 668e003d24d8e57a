//! Deterministic discrete-time world.
//!
//! One decision tick is 0.2 s: packets are exchanged on every chain link,
//! every agent updates its estimators, mode and commands in chain order
//! (head first), then kinematics integrate in ten 50 Hz sub-steps.

use rand::Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::agent::{
    directed_navigation_command, head_velocity, relay_velocity, transition, AgentMode, AgentState,
    NavCommand, PolicyParams, TransitionInput, DECISION_DT,
};
use crate::error::ConfigError;
use crate::estimator::{KalmanParams, LinkEstimate};
use crate::geometry::{Environment, RangeReadings, Vec2};
use crate::metrics::{convergence_detector, variance, Fault, LinkTrace, Metrics, TickRecord};
use crate::radio::{add_noise, true_quality, try_transmit, RadioParams, MIN_LINK_DISTANCE};
use crate::rng::{stream, Stream};
use crate::scenario::{HeadProfile, ScenarioConfig, StartSpec, Variant};

pub const SUBSTEPS: usize = 10;
pub const SUBSTEP_DT: f64 = DECISION_DT / SUBSTEPS as f64;
/// Decision ticks the chain must stay converged before the next launch.
pub const LAUNCH_SETTLE_TICKS: u32 = 10;

pub const CSV_HEADER: &str =
    "tick,time_s,agent_id,mode,x_abscissa,y_offset,link_id,true_q,raw_q,filtered_q,velocity,event";

/// Per-link packet outcome for one tick.
#[derive(Debug, Clone, Copy)]
struct Exchange {
    true_q: f64,
    /// What the head-side member measured from the base-side one.
    up: Option<f64>,
    /// What the base-side member measured from the head-side one.
    down: Option<f64>,
}

pub struct World {
    env: Environment,
    variant: Variant,
    radio: RadioParams,
    kalman: KalmanParams,
    policy: PolicyParams,
    head_profile: HeadProfile,
    manual_launch: bool,
    tick: u64,
    agents: Vec<AgentState>,
    /// Chain member ids, head first, base last.
    chain: Vec<usize>,
    streams: BTreeMap<(usize, usize), Stream>,
    seed: u64,
    launch_pending: Option<usize>,
    converged_ticks: u32,
    pilot_velocity: f64,
    exchanges: Vec<Exchange>,
    order_faulted: Vec<bool>,
    near_collision: Vec<bool>,
    log: String,
    trace: Vec<TickRecord>,
    faults: Vec<Fault>,
    launches: Vec<(f64, usize)>,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, variant: Variant, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let env = cfg.environment()?;
        Ok(Self::with_environment(env, cfg, variant, seed))
    }

    pub fn with_environment(env: Environment, cfg: &ScenarioConfig, variant: Variant, seed: u64) -> Self {
        let mut policy = cfg.policy;
        policy.tolerance = variant.tolerance(cfg.policy.tolerance);
        policy.s_min = cfg.radio.s_min;

        let relays = cfg.relay_count();
        let base_id = relays + 1;
        let mut agents = Vec::with_capacity(relays + 2);
        let base_pose = env.pose_at(0.0);
        let spawn = env.spawn;
        let spawn_abscissa = env.arc_position(spawn.position).unwrap_or(0.0);
        let mut init = stream(seed, "init");
        let mut chain = vec![0];
        match cfg.start {
            StartSpec::Exploration => {
                agents.push(AgentState::new(0, AgentMode::Head, spawn, spawn_abscissa));
                for id in 1..=relays {
                    agents.push(AgentState::new(id, AgentMode::Idle, spawn, spawn_abscissa));
                }
            }
            StartSpec::Random {
                head_abscissa,
                min_separation,
            } => {
                let head_x = head_abscissa.unwrap_or(env.centerline.length());
                agents.push(AgentState::new(0, AgentMode::Head, env.pose_at(head_x), head_x));
                let xs = random_ordered(&mut init, relays, min_separation, head_x - min_separation, min_separation);
                // xs ascending; ids 1.. run from the head toward the base
                for (id, x) in (1..=relays).zip(xs.iter().rev()) {
                    agents.push(AgentState::new(id, AgentMode::Relaying, env.pose_at(*x), *x));
                    chain.push(id);
                }
            }
        }
        agents.push(AgentState::new(base_id, AgentMode::Base, base_pose, 0.0));
        chain.push(base_id);
        let n = agents.len();
        let mut log = String::with_capacity(1 << 16);
        log.push_str(CSV_HEADER);
        log.push('\n');
        Self {
            env,
            variant,
            radio: cfg.radio,
            kalman: cfg.kalman,
            policy,
            head_profile: cfg.head,
            manual_launch: cfg.manual_launch,
            tick: 0,
            agents,
            chain,
            streams: BTreeMap::new(),
            seed,
            launch_pending: None,
            converged_ticks: 0,
            pilot_velocity: 0.0,
            exchanges: Vec::new(),
            order_faulted: vec![false; n],
            near_collision: vec![false; n],
            log,
            trace: Vec::new(),
            faults: Vec::new(),
            launches: Vec::new(),
        }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DECISION_DT
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn event_log(&self) -> &str {
        &self.log
    }

    pub fn trace(&self) -> &[TickRecord] {
        &self.trace
    }

    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    /// Forward speed the pilot asks of the head (interactive profile).
    pub fn set_pilot_velocity(&mut self, v: f64) {
        self.pilot_velocity = v.clamp(-self.policy.v_max, self.policy.v_max);
    }

    pub fn pilot_velocity(&self) -> f64 {
        self.pilot_velocity
    }

    /// Puts an agent on the centerline at `abscissa`, aligned with it.
    pub fn place_agent(&mut self, id: usize, abscissa: f64) {
        let pose = self.env.pose_at(abscissa);
        let a = &mut self.agents[id];
        a.pose = pose;
        a.abscissa = abscissa;
        a.ground_speed = 0.0;
    }

    pub fn manual_launch(&self) -> bool {
        self.manual_launch
    }

    /// Operator launch in manual-launch mode. Returns the launched relay id,
    /// or `None` when manual launch is off, nobody is idle, or a launch is
    /// already under way.
    pub fn request_launch(&mut self) -> Option<usize> {
        if !self.manual_launch || self.launch_busy() {
            return None;
        }
        let id = self.agents.iter().find(|a| a.mode == AgentMode::Idle)?.id;
        self.schedule_launch(id);
        Some(id)
    }

    fn launch_busy(&self) -> bool {
        self.launch_pending.is_some() || self.agents.iter().any(|a| a.mode == AgentMode::TakingOff)
    }

    fn schedule_launch(&mut self, id: usize) {
        self.launch_pending = Some(id);
        self.converged_ticks = 0;
        self.launches.push((self.time(), id));
        let base = *self.chain.last().unwrap();
        self.event(base, &format!("launch:{id}"));
    }

    /// Head, relays and base currently linked, with their link qualities
    /// from the last tick: (head-side id, base-side id, true, raw, filtered).
    pub fn links(&self) -> Vec<LinkTrace> {
        self.trace.last().map(|r| r.links.clone()).unwrap_or_default()
    }

    fn link_stream(&mut self, src: usize, dst: usize) -> &mut Stream {
        let seed = self.seed;
        self.streams
            .entry((src, dst))
            .or_insert_with(|| stream(seed, &format!("link-{src}-{dst}")))
    }

    fn packet(&mut self, src: usize, dst: usize, q: f64) -> Option<f64> {
        let radio = self.radio;
        let rng = self.link_stream(src, dst);
        let delivered = try_transmit(q, &radio, rng);
        let z = add_noise(q, &radio, rng);
        delivered.then_some(z)
    }

    fn event(&mut self, agent: usize, kind: &str) {
        let a = &self.agents[agent];
        let _ = writeln!(
            self.log,
            "{},{:.1},{},{},{:.4},{:.4},,,,,,{}",
            self.tick,
            self.time(),
            agent,
            a.mode,
            a.abscissa,
            self.env.lateral_offset(a.pose.position),
            kind
        );
    }

    fn fault(&mut self, agent: usize, kind: &str) {
        self.faults.push(Fault {
            tick: self.tick,
            agent,
            kind: kind.to_string(),
        });
        self.event(agent, &format!("fault:{kind}"));
    }

    fn view(&self, est: Option<LinkEstimate>, raw: Option<f64>) -> Option<f64> {
        if self.variant.uses_filter() {
            est.map(|e| e.r_hat)
        } else {
            raw
        }
    }

    /// Advances the world by one decision tick.
    pub fn step(&mut self) {
        self.tick += 1;
        let tick = self.tick;

        // 1. one packet each way on every chain link
        self.exchanges.clear();
        for i in 0..self.chain.len() - 1 {
            let (h, b) = (self.chain[i], self.chain[i + 1]);
            let (ph, pb) = (self.agents[h].pose.position, self.agents[b].pose.position);
            let true_q = true_quality(&self.env, ph, pb, &self.radio);
            let up = self.packet(b, h, true_q);
            let down = self.packet(h, b, true_q);
            self.exchanges.push(Exchange { true_q, up, down });
            let close = ph.distance(pb) < MIN_LINK_DISTANCE;
            if close && !self.near_collision[h] {
                self.event(h, "near_collision");
            }
            self.near_collision[h] = close;
        }

        // 2a. estimators
        for i in 0..self.chain.len() {
            let id = self.chain[i];
            if i + 1 < self.chain.len() {
                let b = self.chain[i + 1];
                let u = self.agents[id].ground_speed - self.agents[b].ground_speed;
                let z = self.exchanges[i].up;
                let k = self.kalman;
                let a = &mut self.agents[id];
                a.base_link = step_estimate(a.base_link, u, z, tick, &k);
                a.base_raw = z.or(a.base_raw);
                a.base_missed = if z.is_some() { 0 } else { a.base_missed + 1 };
            }
            if i > 0 {
                let h = self.chain[i - 1];
                let u = self.agents[h].ground_speed - self.agents[id].ground_speed;
                let z = self.exchanges[i - 1].down;
                let k = self.kalman;
                let a = &mut self.agents[id];
                a.head_link = step_estimate(a.head_link, u, z, tick, &k);
                a.head_raw = z.or(a.head_raw);
                a.head_missed = if z.is_some() { 0 } else { a.head_missed + 1 };
            }
        }

        // 2b. mode transitions, chain members first then the rest by id
        let mut order: Vec<usize> = self.chain.clone();
        order.extend((0..self.agents.len()).filter(|id| !self.chain.contains(id)));
        for id in order {
            let mode = self.agents[id].mode;
            if mode == AgentMode::TakingOff {
                self.agents[id].takeoff_elapsed += 1;
            }
            let input = TransitionInput {
                launch_commanded: self.launch_pending == Some(id),
                takeoff_elapsed: self.agents[id].takeoff_elapsed,
                uplink: self.agents[id].uplink(),
            };
            let next = transition(mode, &input, &self.policy);
            if next == mode {
                continue;
            }
            self.agents[id].mode = next;
            self.event(id, &format!("mode:{}->{}", mode, next));
            match (mode, next) {
                (AgentMode::Idle, AgentMode::TakingOff) => {
                    self.launch_pending = None;
                    self.agents[id].takeoff_elapsed = 0;
                }
                (AgentMode::TakingOff, AgentMode::Relaying) => self.join_chain(id),
                _ => {}
            }
        }

        // 2c. commands
        let time = (tick - 1) as f64 * DECISION_DT;
        for i in 0..self.chain.len() {
            let id = self.chain[i];
            let a = &self.agents[id];
            let (v, r_diff) = match a.mode {
                AgentMode::Head => {
                    let pilot = match self.head_profile {
                        HeadProfile::Scripted { speed, duration_s } if time < duration_s - 1e-9 => speed,
                        HeadProfile::Scripted { .. } | HeadProfile::Hold => 0.0,
                        HeadProfile::Interactive => self.pilot_velocity,
                    };
                    (head_velocity(pilot, &a.uplink(), &self.policy), 0.0)
                }
                m if m.is_relay() => {
                    let r_b = self.view(a.base_link, a.base_raw);
                    let r_f = self.view(a.head_link, a.head_raw);
                    let d = relay_velocity(m, r_b, r_f, &self.policy);
                    (d.forward_velocity, d.r_diff)
                }
                _ => (0.0, 0.0),
            };
            let a = &mut self.agents[id];
            a.forward_velocity = v;
            a.r_diff = r_diff;
        }

        // 2d. launch monitor at the base
        self.launch_monitor();

        // 3. kinematics
        let movers: Vec<usize> = self
            .chain
            .iter()
            .copied()
            .filter(|&id| matches!(self.agents[id].mode, AgentMode::Head) || self.agents[id].mode.is_relay())
            .collect();
        let mut penetrated = vec![false; self.agents.len()];
        for _ in 0..SUBSTEPS {
            for &id in &movers {
                let ranges = self.env.raycast_ranges(&self.agents[id].pose);
                let nav = directed_navigation_command(&ranges, self.agents[id].forward_velocity, &self.policy);
                let a = &mut self.agents[id];
                a.nav = nav;
                let prev = a.pose.position;
                let NavCommand { lateral, yaw_rate } = a.nav;
                let v = clearance_limited(a.forward_velocity, &ranges, &self.policy);
                a.pose.integrate(v, lateral, yaw_rate, SUBSTEP_DT);
                if self.env.blocked(prev, a.pose.position) {
                    a.pose.position = prev;
                    penetrated[id] = true;
                }
            }
        }
        for id in 0..self.agents.len() {
            if penetrated[id] {
                self.fault(id, "wall_penetration");
            }
        }
        for &id in &movers {
            let pos = self.agents[id].pose.position;
            match self.env.arc_position(pos) {
                Ok(x) => {
                    let a = &mut self.agents[id];
                    a.ground_speed = (x - a.abscissa) / DECISION_DT;
                    a.abscissa = x;
                }
                Err(_) => {
                    self.agents[id].ground_speed = 0.0;
                    self.fault(id, "off_centerline");
                }
            }
        }

        // 4. ordering, metrics, log
        for i in 0..self.chain.len() - 1 {
            let (h, b) = (self.chain[i], self.chain[i + 1]);
            let bad = self.agents[h].abscissa <= self.agents[b].abscissa;
            if bad && !self.order_faulted[h] {
                self.fault(h, "order");
            }
            self.order_faulted[h] = bad;
        }
        self.record();
    }

    fn join_chain(&mut self, id: usize) {
        let at = self.chain.len() - 1;
        let prev = self.chain[at - 1];
        self.chain.insert(at, id);
        let base = *self.chain.last().unwrap();
        let p = &mut self.agents[prev];
        p.base_link = None;
        p.base_raw = None;
        p.base_missed = 0;
        self.agents[base].head_link = None;
        self.agents[base].head_raw = None;
        self.agents[base].head_missed = 0;
        self.agents[id].reset_links();
        let x = self.agents[id].abscissa;
        self.agents[id].ground_speed = 0.0;
        self.agents[id].pose = self.env.spawn;
        self.agents[id].abscissa = x;
    }

    fn launch_monitor(&mut self) {
        let has_idle = self.agents.iter().any(|a| a.mode == AgentMode::Idle);
        if self.manual_launch || !has_idle || self.launch_busy() {
            self.converged_ticks = 0;
            return;
        }
        let band = self.policy.tolerance.max(2.0);
        let converged = self.chain.iter().all(|&id| {
            let a = &self.agents[id];
            match a.mode {
                AgentMode::Relaying => match (a.base_link, a.head_link) {
                    (Some(b), Some(f)) => (b.r_hat - f.r_hat).abs() <= band,
                    _ => false,
                },
                AgentMode::Retreating => false,
                _ => true,
            }
        });
        self.converged_ticks = if converged { self.converged_ticks + 1 } else { 0 };
        let weakest = self.chain[..self.chain.len() - 1]
            .iter()
            .map(|&id| self.agents[id].base_link.map(|e| e.r_hat))
            .try_fold(f64::INFINITY, |m, q| q.map(|q| m.min(q)));
        let Some(weakest) = weakest else { return };
        if self.converged_ticks >= LAUNCH_SETTLE_TICKS
            && weakest < self.policy.s_min + self.policy.launch_margin
        {
            let id = self
                .agents
                .iter()
                .find(|a| a.mode == AgentMode::Idle)
                .map(|a| a.id)
                .expect("idle agent");
            self.schedule_launch(id);
        }
    }

    fn record(&mut self) {
        let mut links = Vec::with_capacity(self.chain.len());
        for i in 0..self.chain.len() - 1 {
            let (h, b) = (self.chain[i], self.chain[i + 1]);
            let ex = self.exchanges.get(i).copied();
            // a relay joined this tick: its links are measured from the next tick
            let true_q = match ex {
                Some(e) if self.exchanges.len() == self.chain.len() - 1 => e.true_q,
                _ => true_quality(
                    &self.env,
                    self.agents[h].pose.position,
                    self.agents[b].pose.position,
                    &self.radio,
                ),
            };
            let raw_q = if self.exchanges.len() == self.chain.len() - 1 {
                ex.and_then(|e| e.up)
            } else {
                None
            };
            links.push(LinkTrace {
                head_side: h,
                base_side: b,
                true_q,
                raw_q,
                filtered_q: self.agents[h].base_link.map(|e| e.r_hat),
            });
        }
        let max_true_diff = (1..self.chain.len() - 1)
            .filter(|&i| self.agents[self.chain[i]].mode.is_relay())
            .map(|i| (links[i].true_q - links[i - 1].true_q).abs())
            .fold(0.0, f64::max);
        let abscissae = self
            .chain
            .iter()
            .map(|&id| (id, self.agents[id].abscissa))
            .collect();
        let time_s = self.time();
        let tick = self.tick;
        for (i, &id) in self.chain.iter().enumerate() {
            let a = &self.agents[id];
            let y = self.env.lateral_offset(a.pose.position);
            let _ = write!(
                self.log,
                "{},{:.1},{},{},{:.4},{:.4},",
                tick, time_s, id, a.mode, a.abscissa, y
            );
            match links.get(i) {
                Some(l) => {
                    let _ = write!(self.log, "{}-{},{:.4},", l.head_side, l.base_side, l.true_q);
                    if let Some(r) = l.raw_q {
                        let _ = write!(self.log, "{r:.4}");
                    }
                    self.log.push(',');
                    if let Some(f) = l.filtered_q {
                        let _ = write!(self.log, "{f:.4}");
                    }
                    self.log.push(',');
                }
                None => self.log.push_str(",,,,"),
            }
            let _ = writeln!(self.log, "{:.4},", a.forward_velocity);
        }
        self.trace.push(TickRecord {
            tick,
            time_s,
            links,
            max_true_diff,
            abscissae,
        });
    }

    /// Runs until the horizon.
    pub fn run_until(&mut self, horizon_s: f64) {
        let ticks = (horizon_s / DECISION_DT).round() as u64;
        while self.tick < ticks {
            self.step();
        }
    }

    pub fn metrics(&self, cfg: &ScenarioConfig) -> Metrics {
        let settle = self.head_profile.stop_time();
        let first = self.trace.iter().position(|r| r.time_s >= settle - 1e-9);
        let convergence_time = first.and_then(|k| {
            let diffs: Vec<f64> = self.trace[k..].iter().map(|r| r.max_true_diff).collect();
            convergence_detector(&diffs, cfg.metrics.convergence_band, cfg.metrics.convergence_window_s)
                .map(|t| t + self.trace[k].time_s)
        });

        let end = self.time();
        let window: Vec<&TickRecord> = self
            .trace
            .iter()
            .filter(|r| r.time_s > end - cfg.metrics.variance_window_s + 1e-9)
            .collect();
        let tracked: Vec<usize> = self
            .trace
            .last()
            .map(|r| {
                r.abscissae[1..r.abscissae.len() - 1]
                    .iter()
                    .take(cfg.metrics.variance_agents)
                    .map(|(id, _)| *id)
                    .collect()
            })
            .unwrap_or_default();
        let per_agent_variance: Vec<(usize, f64)> = tracked
            .iter()
            .map(|&id| {
                let xs: Vec<f64> = window
                    .iter()
                    .filter_map(|r| r.abscissae.iter().find(|(a, _)| *a == id).map(|(_, x)| *x))
                    .collect();
                (id, if xs.is_empty() { 0.0 } else { variance(&xs) })
            })
            .collect();
        let position_variance = if per_agent_variance.is_empty() {
            0.0
        } else {
            per_agent_variance.iter().map(|(_, v)| v).sum::<f64>() / per_agent_variance.len() as f64
        };
        Metrics {
            convergence_time,
            position_variance,
            per_agent_variance,
            launches: self.launches.clone(),
            faults: self.faults.clone(),
            trace: self.trace.clone(),
        }
    }
}

/// Clearance at which the speed cap reaches zero, m.
pub const STOP_CLEARANCE: f64 = 0.25;

/// Caps the forward speed by the clearance ahead (behind when backing up)
/// so the centering controller has time to turn at corners. Full speed
/// when the nearer reading is at least the wall-follow distance.
pub fn clearance_limited(v: f64, r: &RangeReadings, p: &PolicyParams) -> f64 {
    let near = if v >= 0.0 { r.d_nw.min(r.d_ne) } else { r.d_sw.min(r.d_se) };
    let f = ((near - STOP_CLEARANCE) / (p.wall_distance - STOP_CLEARANCE)).clamp(0.0, 1.0);
    let cap = p.v_max * f;
    v.clamp(-cap, cap)
}

fn step_estimate(
    est: Option<LinkEstimate>,
    u: f64,
    z: Option<f64>,
    tick: u64,
    params: &KalmanParams,
) -> Option<LinkEstimate> {
    match (est, z) {
        (Some(e), z) => Some(e.step(u, z, tick, params)),
        (None, Some(z)) => Some(LinkEstimate::from_measurement(z, tick, params)),
        (None, None) => None,
    }
}

/// `count` sorted values in `[lo, hi]` at least `gap` apart, uniformly
/// distributed over such configurations.
fn random_ordered<R: Rng>(rng: &mut R, count: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    let slack = (hi - lo) - gap * count.saturating_sub(1) as f64;
    assert!(slack >= 0.0, "no room for {count} relays");
    let mut u: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * slack).collect();
    u.sort_by(f64::total_cmp);
    u.iter()
        .enumerate()
        .map(|(i, x)| lo + x + gap * i as f64)
        .collect()
}

/// Everything one scenario run produces.
pub struct RunOutput {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: Metrics,
    pub event_log: String,
}

/// Runs one replicate of a scenario for one variant.
pub fn run_scenario(cfg: &ScenarioConfig, variant: Variant, seed: u64) -> Result<RunOutput, ConfigError> {
    let mut world = World::new(cfg, variant, seed)?;
    world.run_until(cfg.horizon_s);
    Ok(RunOutput {
        variant,
        seed,
        metrics: world.metrics(cfg),
        event_log: world.log,
    })
}

/// Seed of replicate `i` for a base seed.
pub fn replicate_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

#[doc(hidden)]
pub fn point(x: f64, y: f64) -> Vec2 {
    Vec2::new(x, y)
}
