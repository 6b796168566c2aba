use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pathloss parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("pathloss fit needs at least two distinct distances")]
    DegenerateFit,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid measurement for pair ({i}, {j}): {reason}")]
    InvalidMeasurement { i: usize, j: usize, reason: String },
    #[error("missing measurements: {0}")]
    Incomplete(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("graph is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("node {0} has no incident measurement")]
    IsolatedNode(usize),
    #[error("spring model diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("unknown scenario preset `{name}` (valid: {valid})")]
    UnknownPreset { name: String, valid: String },
    #[error("unknown estimator `{name}` (valid: {valid})")]
    UnknownEstimator { name: String, valid: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
