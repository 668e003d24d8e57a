//! Scenario descriptions. A scenario file is TOML; every field has a
//! default, so a file only lists what it changes.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::PolicyParams;
use crate::error::{ConfigError, ParamError};
use crate::estimator::KalmanParams;
use crate::geometry::Environment;
use crate::maps;
use crate::radio::RadioParams;

const BUNDLED: &[(&str, &str)] = &[
    ("fig3_convergence", include_str!("../data/scenarios/fig3_convergence.toml")),
    ("fig3_variants", include_str!("../data/scenarios/fig3_variants.toml")),
    ("exploration", include_str!("../data/scenarios/exploration.toml")),
    ("oracle_check", include_str!("../data/scenarios/oracle_check.toml")),
    ("fig3_random_variants", include_str!("../data/scenarios/fig3_random_variants.toml")),
    ("interactive", include_str!("../data/scenarios/interactive.toml")),
];

/// Which signal feeds the motion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    /// Raw samples, no tolerance.
    T0,
    /// Raw samples, tolerance 5.
    T5,
    /// Kalman-filtered estimates with the configured tolerance.
    #[serde(alias = "Kalman")]
    K,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::T0, Variant::T5, Variant::K];

    pub fn uses_filter(self) -> bool {
        matches!(self, Variant::K)
    }

    pub fn tolerance(self, configured: f64) -> f64 {
        match self {
            Variant::T0 => 0.0,
            Variant::T5 => 5.0,
            Variant::K => configured,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::T0 => "T0",
            Variant::T5 => "T5",
            Variant::K => "K",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "T0" | "t0" => Ok(Variant::T0),
            "T5" | "t5" => Ok(Variant::T5),
            "K" | "k" | "Kalman" | "kalman" => Ok(Variant::K),
            _ => Err(format!("unknown variant `{s}` (expected T0, T5 or K)")),
        }
    }
}

/// How the head is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadProfile {
    /// Constant forward speed for a fixed duration, then hover.
    Scripted { speed: f64, duration_s: f64 },
    /// Hover in place.
    Hold,
    /// Piloted over the telemetry link.
    Interactive,
}

impl Default for HeadProfile {
    fn default() -> Self {
        HeadProfile::Scripted {
            speed: 0.2,
            duration_s: 50.0,
        }
    }
}

impl HeadProfile {
    /// Time after which the head no longer moves on its own.
    pub fn stop_time(&self) -> f64 {
        match *self {
            HeadProfile::Scripted { duration_s, .. } => duration_s,
            _ => 0.0,
        }
    }
}

/// Initial placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartSpec {
    /// Everyone at the entrance: head airborne at spawn, relays idle.
    Exploration,
    /// Relays already airborne at random ordered abscissae between the base
    /// and a hovering head.
    Random {
        /// Defaults to the end of the centerline.
        head_abscissa: Option<f64>,
        #[serde(default = "default_min_separation")]
        min_separation: f64,
    },
}

fn default_min_separation() -> f64 {
    0.5
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec::Exploration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Floor of the convergence band on the true link difference.
    pub convergence_band: f64,
    pub convergence_window_s: f64,
    pub variance_window_s: f64,
    /// Relays (counted from the head) whose position variance is reported.
    pub variance_agents: usize,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            convergence_band: 2.0,
            convergence_window_s: 5.0,
            variance_window_s: 20.0,
            variance_agents: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Bundled map name or path to an environment file.
    pub environment: String,
    /// Several maps for one batch; overrides `environment` when non-empty.
    pub environments: Vec<String>,
    /// Chain members including head and base.
    pub agent_count: usize,
    pub variants: Vec<Variant>,
    pub seed: u64,
    pub horizon_s: f64,
    pub replicates: usize,
    pub start: StartSpec,
    pub head: HeadProfile,
    pub radio: RadioParams,
    pub kalman: KalmanParams,
    pub policy: PolicyParams,
    pub metrics: MetricsSpec,
    /// Relays launch only on an explicit operator request.
    pub manual_launch: bool,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            environment: "straight".into(),
            environments: Vec::new(),
            agent_count: 5,
            variants: vec![Variant::K],
            seed: 1,
            horizon_s: 120.0,
            replicates: 1,
            start: StartSpec::default(),
            head: HeadProfile::default(),
            radio: RadioParams::default(),
            kalman: KalmanParams::default(),
            policy: PolicyParams::default(),
            metrics: MetricsSpec::default(),
            manual_launch: false,
            base_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| {
            let ParamError::Invalid { name, .. } = &e;
            let message = match key_line(text, name) {
                Some(line) => format!("line {line}: {e}"),
                None => e.to_string(),
            };
            ConfigError::Parse {
                origin: origin.to_string(),
                message,
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::parse(text, n).expect("bundled scenario parses"))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// Bundled scenario name, or a path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ConfigError> {
        match Self::bundled(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn environment(&self) -> Result<Environment, ConfigError> {
        maps::resolve(&self.environment, self.base_dir.as_deref())
    }

    /// Every map this scenario runs on.
    pub fn environment_names(&self) -> Vec<String> {
        if self.environments.is_empty() {
            vec![self.environment.clone()]
        } else {
            self.environments.clone()
        }
    }

    /// The same scenario pinned to one map.
    pub fn on_environment(&self, name: &str) -> Self {
        Self {
            environment: name.to_string(),
            environments: Vec::new(),
            ..self.clone()
        }
    }

    pub fn relay_count(&self) -> usize {
        self.agent_count - 2
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.agent_count < 2 {
            return Err(ParamError::invalid("agent_count", "need at least head and base"));
        }
        if self.replicates < 1 {
            return Err(ParamError::invalid("replicates", "must be >= 1"));
        }
        if !(self.horizon_s > 0.0) {
            return Err(ParamError::invalid("horizon_s", "must be > 0"));
        }
        if self.variants.is_empty() {
            return Err(ParamError::invalid("variants", "list at least one variant"));
        }
        if let HeadProfile::Scripted { speed, duration_s } = self.head {
            if speed.abs() > self.policy.v_max {
                return Err(ParamError::invalid(
                    "head.speed",
                    format!("{speed} exceeds policy.v_max {}", self.policy.v_max),
                ));
            }
            if duration_s < 0.0 {
                return Err(ParamError::invalid("head.duration_s", "must be >= 0"));
            }
        }
        if let StartSpec::Random { min_separation, .. } = self.start {
            if !(min_separation > 0.0) {
                return Err(ParamError::invalid("start.min_separation", "must be > 0"));
            }
        }
        self.radio.validate()?;
        self.kalman.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// 1-based line where a dotted parameter name (`policy.v_max`, `s_min`,
/// `policy.c_t/c_r`) is set, if the file sets it.
fn key_line(text: &str, name: &str) -> Option<usize> {
    let name = name.split('/').next().unwrap_or(name);
    let (section, key) = match name.rsplit_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, name),
    };
    let mut current = "";
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        let key_ok = k == key || k.strip_prefix(key).is_some_and(|rest| rest.starts_with('_'));
        if key_ok && section.is_none_or(|s| s == current) {
            return Some(i + 1);
        }
    }
    None
}
