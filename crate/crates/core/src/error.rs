use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sphere grid needs at least {min} directions, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("point is not on the graph (distance {0:e})")]
    NotOnGraph(f64),

    #[error("point is not part of the sample")]
    NotInSample,

    #[error("dual direction is not a unit vector (norm {0})")]
    NotUnit(f64),

    #[error("perturbation does not vanish at the base point (norm {0:e})")]
    NonzeroAtBase(f64),

    #[error("function is not differentiable at the requested point")]
    NotDifferentiable,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("estimate not stabilized")]
    NotStabilized,

    #[error("estimate is infinite")]
    InfiniteEstimate,

    #[error("degenerate: rg⁺ = 0")]
    DegenerateZero,

    #[error("isolated domain direction; enlarge sample")]
    IsolatedDomainDirection,

    #[error("too few witnesses survive radius selection ({0})")]
    TooFewWitnesses(usize),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("SVD did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
