use crate::casefile::BusId;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("case file: {0}")]
    CaseFormat(String),

    #[error("case invariant violated: {0}")]
    CaseInvariant(String),

    #[error("unknown bus id {0}")]
    UnknownBus(BusId),

    #[error("zero-impedance branch {from}-{to}: ideal branches are not supported")]
    ZeroImpedanceBranch { from: BusId, to: BusId },

    #[error("eliminated block is numerically singular (condition estimate {cond:.3e})")]
    SingularBlock { cond: f64 },

    #[error("singular conductance matrix: node for bus {0} is isolated")]
    IsolatedNode(BusId),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("operating point inconsistent: worst injection mismatch {mismatch:.3e} pu at bus {bus}")]
    OperatingPointMismatch { bus: BusId, mismatch: f64 },

    #[error("regressor matrix is rank deficient (condition estimate {cond:.3e}); input is not persistently exciting")]
    RankDeficient { cond: f64 },

    #[error("identification did not converge: coefficient tail variance {tail_variance:.3e}")]
    NotConverged { tail_variance: f64 },

    #[error("identified model is unstable: pole modulus {modulus:.6} outside unit circle")]
    UnstableModel { modulus: f64 },

    #[error("phasor window mismatch: got {got} samples, expected {expected}")]
    WindowMismatch { got: usize, expected: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
