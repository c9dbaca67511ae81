use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("insufficient history: timestep {t} is earlier than order {q}")]
    InsufficientHistory { t: usize, q: usize },

    #[error("singular Gram matrix at timestep {t} (condition {condition:e}); order too large or too few rollouts")]
    SingularGram { t: usize, condition: f64 },

    #[error("order q insufficient: observability stack rank-deficient (rank {rank} < {state_dim})")]
    RankDeficient { rank: usize, state_dim: usize },

    #[error("non-finite state encountered at step {step}")]
    Diverged { step: usize },

    #[error("backward pass irrecoverably ill-conditioned (mu = {mu:e})")]
    IllConditioned { mu: f64 },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
