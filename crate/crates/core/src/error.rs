use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("near-resonant denominator: |{denominator:e}| below guard for mode {mode}, harmonic {harmonic}")]
    NearResonantDenominator {
        mode: usize,
        harmonic: usize,
        denominator: f64,
    },

    #[error("degenerate spectrum: eigenvalues {0} and {1} coincide")]
    DegenerateSpectrum(usize, usize),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("continuation stalled: step {step:e} below minimum after {points} points")]
    Stall { step: f64, points: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("modal amplitude folds back inside the selected branch segment at point {0}")]
    FoldInRange(usize),

    #[error("modal amplitude {amplitude:e} outside database range [{min:e}, {max:e}]")]
    AmplitudeOutOfRange { amplitude: f64, min: f64, max: f64 },

    #[error("time integration diverged at t = {time:e} (state norm {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
