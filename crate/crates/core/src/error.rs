use thiserror::Error;

/// Errors produced by the watermarking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unstable system: spectral radius {0} is not below 1")]
    Unstable(f64),

    #[error("lyapunov iteration did not reach the residual tolerance (residual {residual:e})")]
    LyapunovNoConvergence { residual: f64 },

    #[error("degenerate spectrum: minimum eigenvalue gap {gap:e} is below {threshold:e}")]
    DegenerateSpectrum { gap: f64, threshold: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("divergent series: |lambda_i * lambda_j| = {0} is not below 1")]
    DivergentSeries(f64),

    #[error("matrix {0} is singular or not positive definite")]
    Singular(&'static str),

    #[error("complex sum has a non-negligible imaginary part ({imag:e})")]
    NonReal { imag: f64 },

    #[error("insufficient excitation: normal equations condition number {cond:e}")]
    InsufficientExcitation { cond: f64 },

    #[error("random system generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("sequencing error: {0}")]
    Sequencing(&'static str),

    #[error("online detector has no model yet")]
    NotReady,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(
    context: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        })
    }
}
