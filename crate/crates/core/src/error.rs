use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("unstable queue: drain rate {rate} does not exceed mean input rate {mean}")]
    UnstableQueue { rate: f64, mean: f64 },

    #[error("system overloaded: total mean rate {mean} is not below capacity {capacity}")]
    Overloaded { mean: f64, capacity: f64 },

    #[error("boundary parameterization: {0}")]
    Boundary(String),

    #[error("equal tail indices alpha1 = alpha2 = {0}: no asymptotic regime applies")]
    EqualIndex(f64),

    #[error("unsupported parameterization: {0}")]
    Unsupported(String),

    #[error("scenario hypothesis violated: {0}")]
    Scenario(String),

    #[error("scenario {requested} inconsistent with parameters (classifies as {actual})")]
    InconsistentScenario { requested: String, actual: String },

    #[error("light-tailed input has no power-law tail asymptote")]
    LightTail,

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("workload overflow at t = {t}: {workload:e} exceeds numeric range")]
    Overflow { t: f64, workload: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
