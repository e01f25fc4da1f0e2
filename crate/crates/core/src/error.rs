use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("pump spectrum cannot be normalized: every amplitude is zero")]
    ZeroPump,

    #[error("{what}: expected {expected} entries, found {found}")]
    Length {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("explicit mismatch matrix is not symmetric (max |f - f^T| = {0:e})")]
    AsymmetricMismatch(f64),

    #[error("coupling matrix is not symmetric (max |L - L^T| = {0:e})")]
    AsymmetricCoupling(f64),

    #[error("symmetric eigensolver did not converge for a {0}x{0} matrix")]
    EigenSolver(usize),

    #[error("trivial solution is unstable: sigma = {sigma} exceeds the threshold {threshold}")]
    AboveThreshold { sigma: f64, threshold: f64 },

    #[error("no saturated state: kappa = 0 with sigma above threshold grows without bound")]
    Unbounded,

    #[error(
        "the dominant supermode has a negative eigenvalue ({0}); the real phase-locked ansatz does not cover this regime"
    )]
    NegativeDominant(f64),

    #[error("relaxation did not converge after {steps} steps (last residual {residual:e})")]
    RelaxationStalled { steps: usize, residual: f64 },

    #[error("{0} is undefined for the trivial (below-threshold) state")]
    TrivialState(&'static str),

    #[error("identity check `{name}` failed: {value:e} > {tolerance:e}")]
    IdentityCheck {
        name: String,
        value: f64,
        tolerance: f64,
    },

    #[error("linearised drift is unstable: eigenvalue {0:e} > 0")]
    UnstableDrift(f64),

    #[error("singular resolvent at omega = {0}")]
    SingularResolvent(f64),

    #[error("empty {0} grid")]
    EmptyGrid(&'static str),

    #[error("all {0} trajectories crossed the escape radius")]
    AllDiscarded(usize),

    #[error(
        "phase unwrapping flagged {flagged} of {total} increments ({rate:.3}%); reduce the save stride"
    )]
    UnwrapRate {
        flagged: usize,
        total: usize,
        rate: f64,
    },

    #[error("phase undefined: {0} samples have vanishing projections on the classical comb")]
    PhaseUndefined(usize),

    #[error(
        "{label} is not stationary over the analysis window (windowed mean drift {z:.2} standard errors); increase the transient length"
    )]
    NonStationary { label: String, z: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed trajectory dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
