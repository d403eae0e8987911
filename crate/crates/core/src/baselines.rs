//! The three experimental conditions as executable policies.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{build_modes, ModalPolicy};
use crate::momdp::{assemble, JointBelief, MomdpModel};
use crate::solver::{act_with_override, solve, PolicyArtifact, SolverParams, DEFAULT_OVERRIDE_THRESHOLD};
use crate::task::{Action, Cell, HumanInput, TaskModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Fixed shortest path to the optimal goal.
    #[serde(rename = "none")]
    NoAdaptation,
    /// Robot adapts to the human only.
    #[serde(rename = "oneway")]
    OneWay,
    #[serde(rename = "mutual")]
    Mutual,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::NoAdaptation, Condition::OneWay, Condition::Mutual];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoAdaptation => "none",
            Condition::OneWay => "oneway",
            Condition::Mutual => "mutual",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Condition::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Debug, Clone)]
enum Executor {
    /// One action per observable state.
    Fixed(Vec<Action>),
    Planned(PolicyArtifact),
}

/// A condition's policy together with the model used to track the belief.
#[derive(Debug, Clone)]
pub struct ConditionPolicy {
    condition: Condition,
    model: MomdpModel,
    executor: Executor,
    threshold: f64,
}

impl ConditionPolicy {
    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn model(&self) -> &MomdpModel {
        &self.model
    }

    pub fn artifact(&self) -> Option<&PolicyArtifact> {
        match &self.executor {
            Executor::Planned(p) => Some(p),
            Executor::Fixed(_) => None,
        }
    }

    /// Whether the belief influences the actions.
    pub fn uses_belief(&self) -> bool {
        matches!(self.executor, Executor::Planned(_))
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Sets the override confidence threshold, which must lie in (0.5, 1].
    pub fn with_threshold(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.5 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("override threshold {tau} outside (0.5, 1]")));
        }
        self.threshold = tau;
        Ok(self)
    }

    /// Robot action at observable state `s`.
    pub fn act(&self, s: usize, b: &JointBelief, input: HumanInput) -> Action {
        match &self.executor {
            Executor::Fixed(table) => table[s],
            Executor::Planned(p) => act_with_override(p, &self.model, s, b, input, self.threshold),
        }
    }
}

/// Shortest path to the optimal goal, ignoring the human. Among shortest
/// moves, a lateral step toward the goal beats forward, which beats the rest.
pub fn make_no_adaptation(task: &TaskModel) -> Result<ConditionPolicy> {
    let goal = task
        .optimal_goal()
        .ok_or_else(|| Error::InvalidConfig("no-adaptation needs a unique optimal goal".into()))?
        .clone();
    let model = assemble(task, build_modes(task)?)?;
    let dist = distances_to(task, goal.cell);
    let table = model
        .states()
        .iter()
        .map(|st| {
            let here = st.cell;
            let mut options: Vec<(u8, Action)> = task
                .applicable_actions(here)
                .into_iter()
                .filter_map(|a| {
                    let next = task.transition(here, a).ok()?;
                    let (d0, d1) = (dist.get(&here)?, dist.get(&next)?);
                    (*d1 + 1 == *d0).then_some(a)
                })
                .map(|a| {
                    let toward = (a == Action::Right && goal.cell.col > here.col) || (a == Action::Left && goal.cell.col < here.col);
                    let rank = if toward { 0 } else if a == Action::Forward { 1 } else { 2 };
                    (rank, a)
                })
                .collect();
            options.sort();
            options.first().map_or(Action::Forward, |o| o.1)
        })
        .collect();
    Ok(ConditionPolicy {
        condition: Condition::NoAdaptation,
        model,
        executor: Executor::Fixed(table),
        threshold: DEFAULT_OVERRIDE_THRESHOLD,
    })
}

/// Backward breadth-first distances to `target`, never passing through
/// another goal.
fn distances_to(task: &TaskModel, target: Cell) -> HashMap<Cell, u32> {
    let mut dist = HashMap::from([(target, 0)]);
    let mut queue = VecDeque::from([target]);
    while let Some(y) = queue.pop_front() {
        for a in Action::ALL {
            let (dc, dr) = a.delta();
            let x = Cell::new(y.col - dc, y.row - dr);
            if task.contains(x) && !task.is_goal(x) && !dist.contains_key(&x) && task.transition(x, a).ok() == Some(y) {
                dist.insert(x, dist[&y] + 1);
                queue.push_back(x);
            }
        }
    }
    dist
}

/// The task the one-way condition plans on: adaptability fixed at 0 and
/// every goal paying the lowest goal reward.
pub fn one_way_task(task: &TaskModel) -> Result<TaskModel> {
    let r_sub = task.goals().iter().map(|g| g.reward).fold(f64::INFINITY, f64::min);
    TaskModel::new(task.config().clone().with_alpha_grid(vec![0.0]).with_equal_rewards(r_sub))
}

pub fn make_one_way(task: &TaskModel, modes: &[ModalPolicy], params: &SolverParams) -> Result<ConditionPolicy> {
    let policy = make_mutual(&one_way_task(task)?, modes, params)?;
    Ok(ConditionPolicy { condition: Condition::OneWay, ..policy })
}

pub fn make_mutual(task: &TaskModel, modes: &[ModalPolicy], params: &SolverParams) -> Result<ConditionPolicy> {
    let model = assemble(task, modes.to_vec())?;
    let artifact = solve(&model, params.clone())?;
    Ok(ConditionPolicy {
        condition: Condition::Mutual,
        model,
        executor: Executor::Planned(artifact),
        threshold: DEFAULT_OVERRIDE_THRESHOLD,
    })
}

/// The decision process a planned condition tracks its belief on.
pub fn condition_model(condition: Condition, task: &TaskModel) -> Result<MomdpModel> {
    match condition {
        Condition::OneWay => {
            let t = one_way_task(task)?;
            let modes = build_modes(&t)?;
            assemble(&t, modes)
        }
        _ => assemble(task, build_modes(task)?),
    }
}

/// Wraps a previously solved policy. The artifact must have been solved on
/// [`condition_model`] for the same task.
pub fn from_artifact(condition: Condition, task: &TaskModel, artifact: PolicyArtifact) -> Result<ConditionPolicy> {
    if condition == Condition::NoAdaptation {
        return Err(Error::InvalidConfig("the no-adaptation condition has no solved policy".into()));
    }
    let model = condition_model(condition, task)?;
    artifact.check_model(&model)?;
    Ok(ConditionPolicy { condition, model, executor: Executor::Planned(artifact), threshold: DEFAULT_OVERRIDE_THRESHOLD })
}

/// Builds the named condition.
pub fn make_condition(condition: Condition, task: &TaskModel, modes: &[ModalPolicy], params: &SolverParams) -> Result<ConditionPolicy> {
    match condition {
        Condition::NoAdaptation => make_no_adaptation(task),
        Condition::OneWay => make_one_way(task, modes, params),
        Condition::Mutual => make_mutual(task, modes, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Episode;
    use crate::task::TaskConfig;

    fn task() -> TaskModel {
        TaskModel::new(crate::task::test_funnel()).unwrap()
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("both".parse::<Condition>().is_err());
    }

    #[test]
    fn no_adaptation_takes_a_shortest_path_to_the_optimal_goal() {
        let t = task();
        let p = make_no_adaptation(&t).unwrap();
        let goal = t.optimal_goal().unwrap().cell;
        let d0 = distances_to(&t, goal)[&t.config().start];
        let mut ep = Episode::new(p.model());
        let mut steps = 0;
        while !ep.is_done(p.model()) {
            ep.advance(&p, Some(Action::Left)).unwrap();
            steps += 1;
        }
        assert_eq!(steps as u32, d0);
        assert_eq!(p.model().state(ep.state()).cell, goal);
        assert!(!p.uses_belief());
    }

    #[test]
    fn one_way_plans_on_a_stubborn_human_and_equal_goals() {
        let t = task();
        let ow = one_way_task(&t).unwrap();
        assert_eq!(ow.config().alpha_grid, vec![0.0]);
        assert!(ow.goals().iter().all(|g| g.reward == 10.0));
        assert_eq!(condition_model(Condition::OneWay, &t).unwrap().n_hidden(), 2);
    }

    #[test]
    fn threshold_must_lie_above_one_half() {
        let p = make_no_adaptation(&task()).unwrap();
        assert!(p.clone().with_threshold(0.5).is_err());
        assert!(p.clone().with_threshold(1.01).is_err());
        assert_eq!(p.with_threshold(1.0).unwrap().threshold(), 1.0);
    }

    #[test]
    fn loaded_artifacts_are_checked_against_the_condition() {
        let t = TaskModel::new(TaskConfig::corridor(5)).unwrap();
        let modes = build_modes(&t).unwrap();
        let params = SolverParams { belief_points: 60, ..Default::default() };
        let ow = make_one_way(&t, &modes, &params).unwrap();
        let art = ow.artifact().unwrap().clone();
        let back = from_artifact(Condition::OneWay, &t, art.clone()).unwrap();
        assert_eq!(back.artifact(), Some(&art));
        assert!(from_artifact(Condition::Mutual, &t, art.clone()).is_err());
        assert!(from_artifact(Condition::NoAdaptation, &t, art).is_err());
    }
}
