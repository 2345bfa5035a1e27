use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated its documented range or shape.
    #[error("invalid specification: `{field}` {reason}")]
    Spec { field: String, reason: String },

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NumericalDivergence { epoch: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The world (or a reward table) carries no signal the quantity can be normalized by.
    #[error("degenerate world: {0}")]
    Degenerate(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("KL divergence undefined: reference has zero mass at prompt {prompt}, candidate {candidate}")]
    DivergenceUndefined { prompt: usize, candidate: usize },

    #[error("quadrature did not converge (achieved error estimate {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("pair ({golden} -> {proxy}) failed: {source}")]
    Pair {
        golden: String,
        proxy: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Spec {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the inputs/configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Spec { .. }
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Pair { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
