use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("masked softmax needs at least one unmasked entry")]
    EmptyMask,

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("agent {agent} has no outgoing edges")]
    NoNeighbors { agent: usize },

    #[error("agent index {index} out of range for a graph of {len} agents")]
    AgentIndex { index: usize, len: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("value network needs at least one valid agent")]
    NoValidAgents,

    #[error("non-finite loss at timestep {timestep}")]
    NonFiniteLoss { timestep: usize },

    #[error("pad size {pad} is smaller than the {agents} agents of timestep {timestep}")]
    PadOverflow { pad: usize, agents: usize, timestep: usize },

    #[error("non-positive gap {gap} passed to the car-following model")]
    NonPositiveGap { gap: f64 },

    #[error("collision: vehicle {follower} overlaps vehicle {leader} (gap {gap:.4} m)")]
    Collision { follower: u64, leader: u64, gap: f64 },

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("gradient check failed for `{tensor}`: max relative error {rel_err:.3e} exceeds {tol:.1e}")]
    GradCheck { tensor: String, rel_err: f64, tol: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("mismatched iteration grids: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery itself (as opposed to bad
    /// input files or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NonPositiveGap { .. }
                | Error::Collision { .. }
                | Error::EmptyMask
                | Error::NoNeighbors { .. }
                | Error::NoValidAgents
                | Error::GradCheck { .. }
        )
    }
}
