//! Wire messages: JSON text frames carrying `"v"` and a `"type"` tag.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use uchain::geometry::Environment;
use uchain::World;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("missing protocol version")]
    MissingVersion,
    #[error("unsupported protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(Value),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::MissingVersion | ProtocolError::Version(_) => "version",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Snapshot(Snapshot),
    Command(PilotCommand),
    Error(ErrorFrame),
}

/// Environment digest sent once when a client connects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub environment: String,
    /// Wall segments as `[ax, ay, bx, by]`.
    pub walls: Vec<[f64; 4]>,
    pub centerline: Vec<[f64; 2]>,
    pub manual_launch: bool,
    pub decision_hz: f64,
    pub snapshot_hz: f64,
}

impl Hello {
    pub fn new(env: &Environment, manual_launch: bool) -> Self {
        Self {
            environment: env.name.clone(),
            walls: env.walls.iter().map(|w| [w.a.x, w.a.y, w.b.x, w.b.y]).collect(),
            centerline: env.centerline.points().iter().map(|p| [p.x, p.y]).collect(),
            manual_launch,
            decision_hz: 5.0,
            snapshot_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: usize,
    pub mode: String,
    pub pos: [f64; 2],
    pub heading: f64,
    pub abscissa: f64,
    /// Commanded forward velocity, m/s.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub head_side: usize,
    pub base_side: usize,
    pub raw: Option<f64>,
    pub filtered: Option<f64>,
    pub s_min: f64,
}

/// `seq` is strictly increasing over a session; `tick` never decreases.
/// Two frames are sent per decision tick: one halfway between the previous
/// and current state, then the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub tick: u64,
    pub time: f64,
    pub agents: Vec<AgentView>,
    pub links: Vec<LinkView>,
}

impl Snapshot {
    pub fn of(world: &World, seq: u64) -> Self {
        let s_min = world.radio().s_min;
        Self {
            seq,
            tick: world.tick(),
            time: world.time(),
            agents: world
                .agents()
                .iter()
                .map(|a| AgentView {
                    id: a.id,
                    mode: a.mode.to_string(),
                    pos: [a.pose.position.x, a.pose.position.y],
                    heading: a.pose.heading(),
                    abscissa: a.abscissa,
                    velocity: a.forward_velocity,
                })
                .collect(),
            links: world
                .links()
                .into_iter()
                .map(|l| LinkView {
                    head_side: l.head_side,
                    base_side: l.base_side,
                    raw: l.raw_q,
                    filtered: l.filtered_q,
                    s_min,
                })
                .collect(),
        }
    }

    /// The frame halfway from `prev` to `self`, labelled with `prev`'s tick.
    pub fn midway(prev: &Snapshot, cur: &Snapshot, seq: u64) -> Self {
        let lerp = |a: f64, b: f64| 0.5 * (a + b);
        let agents = cur
            .agents
            .iter()
            .map(|a| match prev.agents.iter().find(|p| p.id == a.id) {
                Some(p) => AgentView {
                    pos: [lerp(p.pos[0], a.pos[0]), lerp(p.pos[1], a.pos[1])],
                    abscissa: lerp(p.abscissa, a.abscissa),
                    ..p.clone()
                },
                None => a.clone(),
            })
            .collect();
        Self {
            seq,
            tick: prev.tick,
            time: lerp(prev.time, cur.time),
            agents,
            links: prev.links.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    Backward,
    Stop,
    LaunchOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotCommand {
    pub action: Action,
    pub issuer: String,
    /// Client clock, milliseconds.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub code: String,
    pub message: String,
}

impl ErrorFrame {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

pub fn encode(msg: &Message) -> String {
    let mut v = serde_json::to_value(msg).expect("messages serialize");
    v.as_object_mut()
        .expect("tagged enum is an object")
        .insert("v".into(), Value::from(PROTOCOL_VERSION));
    v.to_string()
}

/// Unknown fields are ignored.
pub fn decode(text: &str) -> Result<Message, ProtocolError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match v.get("v") {
        None => return Err(ProtocolError::MissingVersion),
        Some(ver) if ver.as_u64() != Some(PROTOCOL_VERSION) => return Err(ProtocolError::Version(ver.clone())),
        Some(_) => {}
    }
    serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(e.to_string()))
}
