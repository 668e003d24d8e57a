use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("centerline needs at least 2 points, got {0}")]
    CenterlineTooShort(usize),
    #[error("centerline has zero length")]
    ZeroLengthCenterline,
    #[error("wall {0} has zero length")]
    DegenerateWall(usize),
    #[error("spawn is {0:.2} m from the centerline")]
    SpawnOffCenterline(f64),
    #[error("point is {distance:.2} m from the centerline (left the tunnel)")]
    OffCenterline { distance: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

impl ParamError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        ParamError::Invalid {
            name,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("need at least 2 links, got {0}")]
    TooFewLinks(usize),
    #[error("head abscissa {head:.2} m leaves no room for {relays} relays on a {resolution} m grid")]
    Infeasible {
        head: f64,
        relays: usize,
        resolution: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("log has no rows")]
    Empty,
    #[error("separation rate is constant throughout the log; slope is undetermined")]
    Degenerate,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}
