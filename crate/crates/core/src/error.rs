use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported rate unit `{0}` (expected one of: au, A^-2fs^-1, cm^-2s^-1)")]
    UnsupportedUnit(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("states live on different grids")]
    GridMismatch,

    #[error("requested {requested} eigenstates but the potential supports only {available} bound states")]
    TooManyStates { requested: usize, available: usize },

    #[error("grid too small: relative edge amplitude {amplitude:.3e} of state {state} exceeds {limit:.0e}")]
    GridTooSmall {
        state: usize,
        amplitude: f64,
        limit: f64,
    },

    #[error("{0}")]
    InitialState(String),

    #[error("superposition weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("invalid propagator configuration: {0}")]
    Config(String),

    #[error(
        "stability guard violated: Λ·(L/2)²·dt = {value:.4} must stay below {limit} \
         (use at least {required_substeps} diffusion substeps)"
    )]
    StabilityGuard {
        value: f64,
        limit: f64,
        required_substeps: usize,
    },

    #[error("step-size instability at step {step}: pre-renormalization norm {norm:.6}")]
    Instability { step: usize, norm: f64 },

    #[error("realization {index} failed: {source}")]
    Realization { index: usize, source: Box<Error> },

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("not yet asymptotic: off-diagonal norm {coherence:.3e} exceeds {threshold:.0e}")]
    NotAsymptotic { coherence: f64, threshold: f64 },

    #[error("trace drift {drift:.3e} after {step} steps; reduce the step size")]
    TraceDrift { step: usize, drift: f64 },

    #[error("no snapshot recorded at t = {0} a.u.")]
    UnknownSnapshot(f64),

    #[error("fit failed: {0}")]
    Fit(String),
}
