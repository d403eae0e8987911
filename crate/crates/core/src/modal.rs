//! Stochastic modal policies.
//!
//! A modal policy spreads probability over every path to its goal with weight
//! `exp(-beta * length)`. Working in the exponentiated space, the desirability
//! `z(s) = exp(beta * V(s))` satisfies the linear equation
//!
//! ```text
//! z(goal) = 1,  z(other goal) = 0,  z(s) = exp(-beta) * sum_a z(T(s, a))
//! ```
//!
//! and iterating it from zero accumulates path weights length by length, which
//! converges to the soft value function. Action probabilities are then
//! `P(a | s) = z(T(s, a)) / sum_b z(T(s, b))`, the softmax of `beta * Q(s, a)`
//! with a unit step cost.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::task::{Action, Cell, Goal, HumanInput, TaskModel};

const MAX_SWEEPS: usize = 200_000;
/// Relative desirability change below which the soft values (= ln z / beta)
/// move by less than 1e-10.
const SOFT_VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalPolicy {
    goal_id: String,
    temperature: f64,
    table: BTreeMap<Cell, [f64; 3]>,
}

impl ModalPolicy {
    pub fn goal_id(&self) -> &str {
        &self.goal_id
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Mode label used on the wire, e.g. `mL` for goal `L`.
    pub fn label(&self) -> String {
        format!("m{}", self.goal_id)
    }

    pub fn distribution(&self, cell: Cell) -> Option<&[f64; 3]> {
        self.table.get(&cell)
    }

    /// Probability of `action` at `cell`; zero for inapplicable actions and
    /// cells outside the workspace.
    pub fn action_prob(&self, cell: Cell, action: Action) -> f64 {
        self.table.get(&cell).map_or(0.0, |d| d[action.index()])
    }

    /// Likelihood of a human input. The null input is uninformative.
    pub fn observation_prob(&self, cell: Cell, input: HumanInput) -> f64 {
        match input {
            Some(a) => self.action_prob(cell, a),
            None => 1.0,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Cell, &[f64; 3])> {
        self.table.iter()
    }

    /// `col row p(left) p(forward) p(right)` per line, after a header.
    pub fn to_table_string(&self) -> String {
        let mut out = format!("# modal policy m{} beta {}\n# col row left forward right\n", self.goal_id, self.temperature);
        for (c, d) in &self.table {
            let _ = writeln!(out, "{} {} {:.12} {:.12} {:.12}", c.col, c.row, d[0], d[1], d[2]);
        }
        out
    }
}

pub fn build_maxent_policy(task: &TaskModel, goal: &Goal, temperature: f64) -> Result<ModalPolicy> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    if task.goal_by_id(&goal.id).map(|g| g.cell) != Some(goal.cell) {
        return Err(Error::UnknownModeGoal(goal.id.clone()));
    }
    let cells: Vec<Cell> = task.cells().collect();
    let index: BTreeMap<Cell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let step_weight = (-temperature).exp();

    let succ: Vec<Vec<(Action, usize)>> = cells
        .iter()
        .map(|&c| {
            if task.is_goal(c) {
                return Vec::new();
            }
            task.applicable_actions(c)
                .into_iter()
                .map(|a| (a, index[&task.transition(c, a).expect("applicable")]))
                .collect()
        })
        .collect();

    let mut z: Vec<f64> = cells.iter().map(|&c| if c == goal.cell { 1.0 } else { 0.0 }).collect();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut next = z.clone();
        let mut max_rel = 0.0f64;
        for (i, edges) in succ.iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let v = step_weight * edges.iter().map(|&(_, j)| z[j]).sum::<f64>();
            if v > 0.0 {
                max_rel = max_rel.max((v - z[i]).abs() / v);
            }
            next[i] = v;
        }
        z = next;
        if z.iter().any(|v| !v.is_finite() || *v > 1e250) {
            return Err(Error::SoftValueDiverged { goal: goal.id.clone() });
        }
        if max_rel <= SOFT_VALUE_TOL * temperature {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SoftValueDiverged { goal: goal.id.clone() });
    }

    let reachable = reachable_from_start(task);
    let mut table = BTreeMap::new();
    for (i, &c) in cells.iter().enumerate() {
        let applicable = task.applicable_actions(c);
        let mut dist = [0.0; 3];
        if task.is_goal(c) {
            let p = 1.0 / applicable.len() as f64;
            for a in applicable {
                dist[a.index()] = p;
            }
        } else {
            let total: f64 = succ[i].iter().map(|&(_, j)| z[j]).sum();
            if total > 0.0 {
                for &(a, j) in &succ[i] {
                    dist[a.index()] = z[j] / total;
                }
            } else if reachable.contains(&c) {
                return Err(Error::UnreachableGoal { goal: goal.id.clone(), cell: c });
            } else {
                let p = 1.0 / applicable.len() as f64;
                for a in applicable {
                    dist[a.index()] = p;
                }
            }
        }
        table.insert(c, dist);
    }
    Ok(ModalPolicy { goal_id: goal.id.clone(), temperature, table })
}

/// One modal policy per task goal, in goal order.
pub fn build_modes(task: &TaskModel) -> Result<Vec<ModalPolicy>> {
    let beta = task.config().temperature;
    task.goals().iter().map(|g| build_maxent_policy(task, g, beta)).collect()
}

fn reachable_from_start(task: &TaskModel) -> HashSet<Cell> {
    let mut seen = HashSet::from([task.start()]);
    let mut queue = VecDeque::from([task.start()]);
    while let Some(c) = queue.pop_front() {
        if task.is_goal(c) {
            continue;
        }
        for a in task.applicable_actions(c) {
            let n = task.transition(c, a).expect("applicable");
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}
