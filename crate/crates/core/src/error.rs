use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One violated invariant, addressed by its configuration key.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<Violation>),

    #[error("{0}")]
    Domain(String),

    #[error("relaxation did not converge after {iterations} iterations (residual {residual:e} V)")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("point (x = {x:e} m, r = {r:e} m) lies outside the vacuum region")]
    OutOfDomain { x: f64, r: f64 },

    #[error("trajectory did not reach the exit plane ({0})")]
    NotTransmitted(String),

    #[error("fit failed: {message} (best cost {cost:e})")]
    Fit { message: String, cost: f64 },

    #[error("{0}")]
    Statistics(String),

    #[error("no frequency in the search grid matches the correlation data (best reduced chi2 {0:.3})")]
    FrequencySearch(f64),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable tag, used in run reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::Domain(_) => "domain",
            Error::NotConverged { .. } => "not_converged",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::NotTransmitted(_) => "not_transmitted",
            Error::Fit { .. } => "fit",
            Error::Statistics(_) => "statistics",
            Error::FrequencySearch(_) => "frequency_search",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Parse(_) => "parse",
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
