use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Box<DVector<f64>>,
    },

    #[error("p/k = {ratio} is below the critical range; formula requires p/k >= {min_ratio:.6}")]
    BelowCriticalRange { ratio: f64, min_ratio: f64 },

    #[error("f(p/k) = {value} violates 0 <= 2f(x) <= log(4pi) + 5 log log(x) at x = {ratio}")]
    FOutOfBand { value: f64, ratio: f64 },

    #[error("beta* does not have minimal l1 norm among {{b : Xb = Xb*}}: dual certificate infeasible")]
    NotMinimalH,

    #[error("packing draw budget exhausted: kept {achieved} vectors, {required} required")]
    BudgetExhausted { achieved: usize, required: usize },

    #[error("SVD did not converge after {0} sweeps")]
    SvdNonConvergence(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by a numerical routine failing to converge.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::SvdNonConvergence(_)
        )
    }
}
