use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("unit {0} is not in the sample")]
    NotInSample(usize),

    #[error("incomplete data: {0}")]
    IncompleteData(String),

    #[error("singular system in {block}")]
    Singular { block: String },

    #[error("{model} did not converge after {iterations} iterations (score max-norm trace: {trace:?})")]
    NonConvergence {
        model: String,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("{model}: fitted probabilities at 0 or 1, the data are separated")]
    Separation { model: String },

    #[error("degenerate score compression: {0}")]
    DegenerateCompression(String),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("calibration target {target} is outside the attainable interval [{lower}, {upper}]")]
    Infeasible { target: f64, lower: f64, upper: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn singular(block: impl Into<String>) -> Self {
        Error::Singular {
            block: block.into(),
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonConvergence { .. }
                | Error::Separation { .. }
                | Error::DegenerateCompression(_)
                | Error::DegenerateCalibration(_)
                | Error::Infeasible { .. }
                | Error::Solver(_)
                | Error::Metric(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
