//! U-Chain: a relay chain of small UAVs that keeps a radio path open
//! between a base station and an exploring head.

pub mod agent;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod eventlog;
pub mod geometry;
pub mod maps;
pub mod metrics;
pub mod oracle;
pub mod radio;
pub mod rng;
pub mod scenario;

pub use agent::{AgentMode, AgentState, PolicyParams};
pub use engine::{run_scenario, RunOutput, World};
pub use error::{CalibrationError, ConfigError, GeometryError, OracleError, ParamError};
pub use estimator::{KalmanParams, LinkEstimate};
pub use geometry::{Environment, Pose, Vec2};
pub use metrics::Metrics;
pub use radio::RadioParams;
pub use scenario::{ScenarioConfig, Variant};
