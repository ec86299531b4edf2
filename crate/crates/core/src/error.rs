use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid radial grid: {0}")]
    InvalidGrid(String),

    #[error("no ground state at omega = {omega}: {reason}")]
    NoGroundState { omega: f64, reason: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("converged profile at omega = {omega} changes sign (min value {min_value:.3e})")]
    NodalSolution { omega: f64, min_value: f64 },

    #[error("tail of the profile at omega = {omega} is {ratio:.3e} of the peak, above the floor {floor:.1e}; enlarge r_max")]
    DomainTooSmall { omega: f64, ratio: f64, floor: f64 },

    #[error("frequency grid is not strictly increasing")]
    NonMonotoneGrid,

    #[error("need at least {required} frequencies, got {got}")]
    InsufficientPoints { required: usize, got: usize },

    #[error("q' does not change sign on the frequency grid")]
    NoCriticalPoint,

    #[error("no potential well: Q - q(omega*) = {excess:.3e} is not positive")]
    NoWell { excess: f64 },

    #[error("frequency {omega} outside [{lo}, {hi}]")]
    OutOfRange { omega: f64, lo: f64, hi: f64 },

    #[error("pairing A = {value:.3e} at omega = {omega} is not positive")]
    NonPositivePairing { omega: f64, value: f64 },

    #[error("singular linear solve: {0}")]
    SingularSolve(String),

    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),

    #[error("time step {dt} exceeds the stability bound {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("fewer than two period markers found ({found})")]
    NotPeriodic { found: usize },

    #[error("mu solve failed: {0}")]
    MuSolveFailed(String),

    #[error("mass mismatch: target {target}, achieved {achieved}")]
    MassMismatch { target: f64, achieved: f64 },

    #[error("linear solve failure: {0}")]
    LinearSolveFailure(String),

    #[error("tail amplitude {amplitude:.3e} at t = {t} exceeds floor {floor:.3e}")]
    TailContamination { t: f64, amplitude: f64, floor: f64 },

    #[error("modulation Newton diverged: {0}")]
    NewtonDiverged(String),

    #[error("pairing Jacobian is singular at omega = {omega}")]
    JacobianSingular { omega: f64 },

    #[error("time grids do not match: {0}")]
    TimeGridMismatch(String),

    #[error("too many steps: {steps} > cap {cap}")]
    StepCap { steps: u64, cap: u64 },

    #[error("at omega = {omega}: {source}")]
    AtFrequency {
        omega: f64,
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
    pub(crate) fn at(self, omega: f64) -> Self {
        Error::AtFrequency {
            omega,
            source: Box::new(self),
        }
    }

    /// Strips frequency context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrequency { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
