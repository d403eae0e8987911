//! Mutual adaptation for shared autonomy.
//!
//! The robot plans over a mixed-observability decision process whose hidden
//! state is the operator's goal mode and adaptability. Operators are modelled
//! with bounded memory: they judge the robot's intent from its last `k`
//! actions and adopt it with probability `alpha`. The robot pays a penalty
//! for perceived disagreement, so it guides adaptable operators toward the
//! optimal goal and complies with stubborn ones.

pub mod baselines;
pub mod error;
pub mod inference;
pub mod modal;
pub mod momdp;
pub mod session;
pub mod sim;
pub mod solver;
pub mod task;

pub use baselines::{Condition, ConditionPolicy};
pub use error::{Error, Result};
pub use inference::{Adaptability, ModeDistribution};
pub use modal::ModalPolicy;
pub use momdp::{JointBelief, MomdpModel};
pub use sim::{ExperimentResult, SimulatedUser, TrialLog};
pub use solver::{AlphaVector, PolicyArtifact, SolverParams};
pub use task::{Action, Cell, Goal, History, HumanInput, ObservableState, TaskConfig, TaskModel};
