use crate::task::{Action, Cell};

/// Errors raised while building or running the planning stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("action {action} is not applicable at cell {cell}")]
    Inapplicable { cell: Cell, action: Action },

    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),

    #[error("goal {goal} is unreachable from cell {cell}")]
    UnreachableGoal { goal: String, cell: Cell },

    #[error("soft value iteration toward goal {goal} diverged; raise the temperature")]
    SoftValueDiverged { goal: String },

    #[error("modal policy for goal {0} does not match any goal of the task")]
    UnknownModeGoal(String),

    #[error("observable state ({0}) is not part of the model")]
    UnknownState(String),

    #[error("exact search needs {required} leaves, above the cap of {cap}")]
    SearchBudget { required: u128, cap: u128 },

    #[error("malformed policy artifact at line {line}: {reason}")]
    Artifact { line: usize, reason: String },

    #[error("policy artifact does not match the model: {0}")]
    ArtifactMismatch(String),

    #[error("the episode has already reached a goal")]
    EpisodeOver,

    #[error("failed to parse configuration: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
