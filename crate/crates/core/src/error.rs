use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Parse {
        row: usize,
        column: Option<String>,
        message: String,
    },

    #[error("linkage design matrix is rank deficient")]
    SingularDesign,

    #[error("complete separation in linkage model (|gamma[{index}]| = {value:.3})")]
    SeparationDetected { index: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (score sup-norm {score_norm:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        score_norm: f64,
    },

    /// `time` is `None` when there are no weighted events at all.
    #[error("{}", match time { Some(t) => format!("empty risk set at event time {t}"), None => "no weighted events".to_string() })]
    EmptyRiskSet { time: Option<f64> },

    #[error("Cox information matrix is singular")]
    SingularHessian,

    #[error("linkage information matrix is singular")]
    SingularLinkageInfo,

    #[error("{what} is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e}, max {max_eigenvalue:.3e})")]
    NotPositiveSemidefinite {
        what: &'static str,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("degenerate scenario: method {method} failed on {failed} of {reps} replications")]
    DegenerateScenario {
        method: String,
        failed: usize,
        reps: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(row: usize, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }
}
