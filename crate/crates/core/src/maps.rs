//! Environment files and the bundled tunnel maps.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::ConfigError;
use crate::geometry::{Environment, Pose, Segment, Vec2};

const BUNDLED: &[(&str, &str)] = &[
    ("straight", include_str!("../data/envs/straight.toml")),
    ("l_corridor", include_str!("../data/envs/l_corridor.toml")),
    ("s_corridor", include_str!("../data/envs/s_corridor.toml")),
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

/// On-disk environment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile {
    pub name: String,
    pub centerline: Vec<[f64; 2]>,
    pub spawn: SpawnSpec,
    pub walls: Vec<[f64; 4]>,
}

impl EnvFile {
    pub fn into_environment(self) -> Result<Environment, ConfigError> {
        let walls = self
            .walls
            .iter()
            .map(|w| Segment::new(Vec2::new(w[0], w[1]), Vec2::new(w[2], w[3])))
            .collect();
        let centerline = self.centerline.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let spawn = Pose::new(Vec2::new(self.spawn.x, self.spawn.y), self.spawn.heading);
        Ok(Environment::new(self.name, walls, centerline, spawn)?)
    }

    pub fn from_environment(env: &Environment) -> Self {
        Self {
            name: env.name.clone(),
            centerline: env.centerline.points().iter().map(|p| [p.x, p.y]).collect(),
            spawn: SpawnSpec {
                x: env.spawn.position.x,
                y: env.spawn.position.y,
                heading: env.spawn.heading(),
            },
            walls: env.walls.iter().map(|w| [w.a.x, w.a.y, w.b.x, w.b.y]).collect(),
        }
    }
}

pub fn parse_environment(text: &str, origin: &str) -> Result<Environment, ConfigError> {
    let file: EnvFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    file.into_environment()
}

pub fn load_environment(path: &Path) -> Result<Environment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_environment(&text, &path.display().to_string())
}

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Result<Environment, ConfigError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::UnknownEnvironment(name.to_string()))?;
    parse_environment(text, name)
}

/// Resolves a bundled name, falling back to a file path.
pub fn resolve(name_or_path: &str, base_dir: Option<&Path>) -> Result<Environment, ConfigError> {
    if let Ok(env) = bundled(name_or_path) {
        return Ok(env);
    }
    let path = match base_dir {
        Some(dir) if Path::new(name_or_path).is_relative() => dir.join(name_or_path),
        _ => Path::new(name_or_path).to_path_buf(),
    };
    if path.exists() {
        load_environment(&path)
    } else {
        Err(ConfigError::UnknownEnvironment(name_or_path.to_string()))
    }
}

pub fn straight() -> Environment {
    bundled("straight").expect("bundled map")
}

pub fn l_corridor() -> Environment {
    bundled("l_corridor").expect("bundled map")
}

pub fn s_corridor() -> Environment {
    bundled("s_corridor").expect("bundled map")
}
