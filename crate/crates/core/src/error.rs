use thiserror::Error;

/// Errors raised anywhere in the solver, learning and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("interface location {0} does not coincide with a cell boundary")]
    InterfaceNotOnGrid(f64),
    #[error("mesh resolution must be at least one cell per direction")]
    ZeroCells,
    #[error("point {0:?} lies outside the domain")]
    OutOfDomain([f64; 2]),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("coefficient must be strictly positive, got {0}")]
    NonPositiveCoefficient(f64),
    #[error("argument {0} outside the supported range")]
    ArgumentOutOfRange(f64),
    #[error("unsupported quadrature order {0}")]
    UnsupportedOrder(usize),
    #[error("reaction coefficient is negative ({0}) on a cell")]
    NegativeCoefficient(f64),
    #[error("local basis functions are numerically dependent (det = {0:e})")]
    DegenerateWronskian(f64),
    #[error("point {0:?} sits on a shared boundary; a side must be given")]
    SideRequired([f64; 2]),
    #[error("point {0:?} is not on a cell boundary")]
    NotOnBoundary([f64; 2]),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("activation cache does not belong to the current parameters")]
    StaleCache,
    #[error("sensor locations must be distinct")]
    DuplicateSensors,
    #[error("covariance factorization failed even with jitter {0:e}")]
    FactorizationFailure(f64),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("boundary layer unresolved at the maximum resolution {0}")]
    UnresolvedLayer(usize),
    #[error("least-squares system is rank deficient")]
    RankDeficient,
    #[error("reference grid is identically zero")]
    ZeroReference,
    #[error("broken norm of order {order} needs {order}+1 derivative samples, got {got}")]
    InsufficientDerivatives { order: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset has no reference solutions")]
    MissingReference,
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed container: {0}")]
    Format(String),
    #[error("non-finite loss at step {0}")]
    NanLoss(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownBenchmark(_)
            | Error::InterfaceNotOnGrid(_)
            | Error::ZeroCells
            | Error::MeshMismatch(_)
            | Error::MissingReference
            | Error::VersionMismatch { .. }
            | Error::Format(_)
            | Error::Json(_)
            | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
