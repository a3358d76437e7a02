use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("path needs at least two samples, got {0}")]
    TooShort(usize),
    #[error("column length mismatch: arc {arc}, curvature {curvature}, speed {speed}")]
    LengthMismatch { arc: usize, curvature: usize, speed: usize },
    #[error("arc length must start at 0, got {0}")]
    NonZeroStart(f64),
    #[error("arc length not strictly increasing at sample {0}")]
    NotIncreasing(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("speed profile must be non-negative")]
    NegativeSpeed,
    #[error("speed profile must end at rest, got {0}")]
    TerminalSpeed(f64),
    #[error("invalid lane tube [{left}, {right}]")]
    Tube { left: f64, right: f64 },
    #[error("missing metadata line `{0}=`")]
    MissingMetadata(&'static str),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("vehicle at the curvature center: |1 - w*kappa| = {0:e}")]
    SingularGeometry(f64),
    #[error("dynamic model undefined at vx = {0} m/s")]
    Standstill(f64),
    #[error("invalid plant parameter `{0}`")]
    InvalidParams(&'static str),
    #[error("invalid randomization spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("weights not definite: q must be >= 0 and r > 0 (entry {index} = {value})")]
    Indefinite { index: usize, value: f64 },
    #[error("expected {expected} weights, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid OCP configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TunerError {
    #[error("covariance is not positive definite after jitter")]
    Cholesky,
    #[error("theta outside its bounds at coordinate {0}")]
    DegenerateBounds(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("SPSA perturbation vanishes at coordinate {0}")]
    ZeroPerturbation(usize),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("rollout job {0} failed: {1}")]
    JobFailed(String, String),
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CampaignError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CampaignError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
