use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rejection sampler exceeded its budget of {budget} draws ({what})")]
    SamplerBudget { what: &'static str, budget: usize },

    #[error("domain does not intersect grid")]
    EmptyDomain,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("linear solver failed to converge (relative residual {residual:e})")]
    SolverNonConvergence { residual: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate channel statistics: {0}")]
    DegenerateStats(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the numerics (solver, sampler, non-finite values)
    /// as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::SamplerBudget { .. }
                | Error::EmptyDomain
                | Error::Degenerate(_)
                | Error::SolverNonConvergence { .. }
                | Error::Singular(_)
                | Error::DegenerateStats(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
