use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
    Resolution,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid system specification: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("state has no proper P representation: {0}")]
    ImproperState(String),

    #[error("damping matrix is singular: {} undamped direction(s), no unique stationary state", .undamped.len())]
    SingularDamping { undamped: Vec<Vec<num_complex::Complex64>> },

    #[error(
        "eigenvalues {first} and {second} are nearly degenerate (gap {gap:.3e} <= {threshold:.3e}); \
         similarity diagonalization is ill-posed near an exceptional point"
    )]
    NearDegenerate { first: usize, second: usize, gap: f64, threshold: f64 },

    #[error("step {dt} violates the stability guard; use dt <= {suggested_dt:.6e}")]
    Stability { dt: f64, suggested_dt: f64 },

    #[error("grid step {dt} does not resolve the fastest oscillation; use dt <= {suggested_dt:.6e}")]
    Resolution { dt: f64, suggested_dt: f64 },

    #[error("solution blew up at t = {t}: |z| = {norm:.3e} exceeds {limit:.3e} (dt = {dt})")]
    Instability { t: f64, norm: f64, limit: f64, dt: f64 },

    #[error("ensemble would hold {requested} values, above the budget of {budget}; enable streaming")]
    ResourceLimit { requested: usize, budget: usize },

    #[error("ensemble was generated for spec {ensemble} but the analytic run uses {analytic}")]
    SpecMismatch { ensemble: String, analytic: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::Json(_)
            | Error::InvalidSpec(_)
            | Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::ImproperState(_)
            | Error::SpecMismatch { .. } => ErrorKind::Validation,
            Error::NonFinite(_)
            | Error::Consistency(_)
            | Error::SingularDamping { .. }
            | Error::NearDegenerate { .. }
            | Error::ResourceLimit { .. } => ErrorKind::Numerical,
            Error::Stability { .. } | Error::Resolution { .. } | Error::Instability { .. } => ErrorKind::Resolution,
        }
    }
}
