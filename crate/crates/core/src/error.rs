use thiserror::Error;

/// Errors produced by the solver library.
///
/// Variants split into two families: configuration problems (bad input,
/// inconsistent dimensions) and numerical failures (non-convergence,
/// singular systems). [`Error::is_numerical`] tells them apart, which the
/// CLI maps to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid harmonic scheme: {0}")]
    InvalidScheme(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error(
        "inner Newton iteration failed at sample {sample}, step {step} \
         (residual {residual:.3e} after {iterations} iterations)"
    )]
    StepFailure {
        sample: usize,
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("Newton correction did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("bordered system is rank deficient ({0}); a phase or frequency condition is probably missing")]
    RankDeficient(String),

    #[error("forcing frequency {frequency} hits a resonance of the linear system")]
    Resonance { frequency: f64 },

    #[error("step size underflow at t = {time:.6e}; the problem looks stiff, try a shorter span")]
    StepUnderflow { time: f64 },

    #[error("non-finite value encountered in {0}")]
    NotFinite(String),
}

impl Error {
    /// True for failures of the numerics, false for bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidModel(_)
                | Error::InvalidScheme(_)
                | Error::DimensionMismatch(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
