use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("integrability error: {0}")]
    Integrability(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimate {estimate:e}, error {error:e}")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },

    #[error("p_max = {p_max} too small: dropped momentum tail {tail:e} exceeds {limit:e}")]
    PMaxTooSmall { p_max: f64, tail: f64, limit: f64 },

    #[error("matrix `{0}` is not symmetric; use the momentum-space partner for sign-indefinite potentials")]
    NotSymmetric(String),

    #[error("1 + M is near-singular (smallest eigenvalue {min_eig}); resonance or bound state")]
    NearSingular { min_eig: f64 },

    #[error("zero-energy solution has a node at r = {r_node}: bound state present")]
    BoundState { r_node: f64 },

    #[error("asymptotic fit residual {residual:e} above tolerance {tol:e}; increase r_max (currently {r_max})")]
    RMaxTooSmall { residual: f64, tol: f64, r_max: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("bracket inversion: positivity fails at the upper bound T = {t_hi:e} (min eigenvalue {min_eig})")]
    BracketInversion { t_hi: f64, min_eig: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("gap iteration did not settle after {iterations} iterations at damping floor (residual {residual:e})")]
    GapNotConverged {
        iterations: usize,
        residual: f64,
        /// Fixed-point defect after every iteration.
        history: Vec<f64>,
    },

    #[error("config line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
