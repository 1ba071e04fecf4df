use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Not enough retained rows to identify the requested model.
    #[error("sample too small: {rows} rows available, at least {required} required")]
    TooFewRows { rows: usize, required: usize },

    #[error("normal equations singular after {attempts} jittered attempts")]
    Singular { attempts: usize },

    /// The objective decreased between two EM iterations by more than the
    /// configured tolerance. This indicates a defect, not a data condition.
    #[error("objective decreased at iteration {iteration}: {before} -> {after}")]
    Monotonicity {
        iteration: usize,
        before: f64,
        after: f64,
    },

    /// The closed-form M-step for β lowered its own surrogate objective.
    #[error("M-step decreased its surrogate objective: {before} -> {after}")]
    MStepDecrease { before: f64, after: f64 },

    #[error("all {starts} starts failed; last error: {last}")]
    AllStartsFailed { starts: usize, last: String },

    #[error("outer iteration {outer}: {source}")]
    Outer {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too many failures: {0}")]
    Failures(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by the numerics of a fit rather than by bad
    /// input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::Monotonicity { .. }
            | Error::MStepDecrease { .. }
            | Error::AllStartsFailed { .. }
            | Error::Failures(_) => true,
            Error::Outer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
