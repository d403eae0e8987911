//! Mixed-observability decision process over the shared-autonomy task.
//!
//! The observable part is the robot cell plus its bounded history. The hidden
//! part is the pair (adaptability, human mode). Adaptability never changes
//! within a task, so the hidden dynamics reduce to the human-mode switching
//! kernel conditioned on each adaptability value.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{infer_robot_mode, switch_distribution, ModeDistribution};
use crate::modal::ModalPolicy;
use crate::task::{Action, HumanInput, ObservableState, TaskModel};

/// Joint belief over (adaptability index, mode index), stored row-major by
/// adaptability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBelief {
    n_alpha: usize,
    n_modes: usize,
    probs: Vec<f64>,
}

impl JointBelief {
    pub fn uniform(n_alpha: usize, n_modes: usize) -> Self {
        let n = n_alpha * n_modes;
        Self { n_alpha, n_modes, probs: vec![1.0 / n as f64; n] }
    }

    pub fn point(n_alpha: usize, n_modes: usize, alpha: usize, mode: usize) -> Self {
        let mut probs = vec![0.0; n_alpha * n_modes];
        probs[alpha * n_modes + mode] = 1.0;
        Self { n_alpha, n_modes, probs }
    }

    /// Builds a belief from unnormalized weights; `None` if they sum to zero.
    pub fn from_weights(n_alpha: usize, n_modes: usize, weights: Vec<f64>) -> Option<Self> {
        assert_eq!(weights.len(), n_alpha * n_modes);
        let total: f64 = weights.iter().sum();
        (total > 0.0 && total.is_finite())
            .then(|| Self { n_alpha, n_modes, probs: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Product of an adaptability prior and a mode prior.
    pub fn product(alpha: &[f64], modes: &[f64]) -> Self {
        let probs = alpha.iter().flat_map(|a| modes.iter().map(move |m| a * m)).collect();
        Self { n_alpha: alpha.len(), n_modes: modes.len(), probs }
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, alpha: usize, mode: usize) -> f64 {
        self.probs[alpha * self.n_modes + mode]
    }

    pub fn alpha_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.n_modes).map(|row| row.iter().sum()).collect()
    }

    pub fn mode_marginal(&self) -> Vec<f64> {
        (0..self.n_modes).map(|m| (0..self.n_alpha).map(|a| self.get(a, m)).sum()).collect()
    }

    pub fn mode_distribution(&self) -> ModeDistribution {
        ModeDistribution::from_weights(self.mode_marginal()).expect("belief is normalized")
    }

    pub fn alpha_mean(&self, grid: &[f64]) -> f64 {
        self.alpha_marginal().iter().zip(grid).map(|(p, a)| p * a).sum()
    }

    pub fn dot(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(b, v)| b * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub belief: JointBelief,
    pub next_state: usize,
    /// Zero-likelihood observation; the belief is the bare prediction.
    pub degenerate: bool,
}

/// The assembled model. Immutable once built.
#[derive(Debug, Clone)]
pub struct MomdpModel {
    task: TaskModel,
    modes: Vec<ModalPolicy>,
    states: Vec<ObservableState>,
    index: HashMap<ObservableState, usize>,
    start: usize,
    alpha_grid: Vec<f64>,
    goal_of: Vec<Option<usize>>,
    succ: Vec<[Option<usize>; 3]>,
    robot_mode: Vec<[Option<ModeDistribution>; 3]>,
    /// `kernel[s][a][alpha][m * n_modes + m']` = P(m' | alpha, m, robot-mode estimate after (s, a)).
    kernel: Vec<[Vec<Vec<f64>>; 3]>,
}

pub fn assemble(task: &TaskModel, modes: Vec<ModalPolicy>) -> Result<MomdpModel> {
    if modes.is_empty() {
        return Err(Error::InvalidConfig("at least one modal policy is required".into()));
    }
    for m in &modes {
        if task.goal_by_id(m.goal_id()).is_none() {
            return Err(Error::UnknownModeGoal(m.goal_id().to_string()));
        }
    }
    let k = task.memory();
    let alpha_grid = task.config().alpha_grid.clone();
    let states = task.enumerate_observable_states();
    let index: HashMap<_, _> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let start = index[&ObservableState { cell: task.start(), history: Default::default() }];

    let n_modes = modes.len();
    let mut goal_of = Vec::with_capacity(states.len());
    let mut succ = Vec::with_capacity(states.len());
    let mut robot_mode = Vec::with_capacity(states.len());
    let mut kernel = Vec::with_capacity(states.len());
    for s in &states {
        let goal = task.goal_index(s.cell);
        goal_of.push(goal);
        let mut next = [None; 3];
        let mut est: [Option<ModeDistribution>; 3] = Default::default();
        let mut ker: [Vec<Vec<f64>>; 3] = Default::default();
        // Goal states loop back onto themselves under every action; the
        // robot-mode estimate still sees the pushed window.
        let own = index[s];
        for a in task.applicable_actions(s.cell) {
            let window = s.history.pushed(s.cell, a, k);
            next[a.index()] = Some(match goal {
                Some(_) => own,
                None => index[&ObservableState { cell: task.transition(s.cell, a)?, history: window.clone() }],
            });
            let p_r = infer_robot_mode(window.entries(), &modes);
            ker[a.index()] = alpha_grid
                .iter()
                .map(|&alpha| (0..n_modes).flat_map(|m| switch_distribution(alpha, m, &p_r).probs().to_vec()).collect())
                .collect();
            est[a.index()] = Some(p_r);
        }
        succ.push(next);
        robot_mode.push(est);
        kernel.push(ker);
    }

    Ok(MomdpModel {
        task: task.clone(),
        modes,
        states,
        index,
        start,
        alpha_grid,
        goal_of,
        succ,
        robot_mode,
        kernel,
    })
}

impl MomdpModel {
    pub fn task(&self) -> &TaskModel {
        &self.task
    }

    pub fn modes(&self) -> &[ModalPolicy] {
        &self.modes
    }

    pub fn alpha_grid(&self) -> &[f64] {
        &self.alpha_grid
    }

    pub fn discount(&self) -> f64 {
        self.task.config().discount
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha_grid.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.n_alpha() * self.n_modes()
    }

    /// |alpha grid| x |modes| x |observable states|.
    pub fn total_states(&self) -> usize {
        self.n_hidden() * self.n_states()
    }

    pub fn states(&self) -> &[ObservableState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &ObservableState {
        &self.states[i]
    }

    pub fn state_index(&self, s: &ObservableState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn start_state(&self) -> usize {
        self.start
    }

    pub fn goal_of(&self, s: usize) -> Option<usize> {
        self.goal_of[s]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.goal_of[s].is_some()
    }

    pub fn uniform_belief(&self) -> JointBelief {
        JointBelief::uniform(self.n_alpha(), self.n_modes())
    }

    pub fn mode_index(&self, goal_id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.goal_id() == goal_id)
    }

    /// Deterministic observable transition; `None` for inapplicable actions.
    /// Terminal states map to themselves.
    pub fn successor(&self, s: usize, a: Action) -> Option<usize> {
        self.succ[s][a.index()]
    }

    pub fn applicable(&self, s: usize) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(move |a| self.succ[s][a.index()].is_some())
    }

    /// Human estimate of the robot mode after the robot takes `a` in `s`.
    pub fn robot_mode_after(&self, s: usize, a: Action) -> Option<&ModeDistribution> {
        self.robot_mode[s][a.index()].as_ref()
    }

    /// Switching matrix for adaptability index `alpha` after `(s, a)`,
    /// flattened as `[m * n_modes + m']`.
    pub fn mode_kernel(&self, s: usize, a: Action, alpha: usize) -> &[f64] {
        &self.kernel[s][a.index()][alpha]
    }

    /// Likelihood of a human input in observable state `s`.
    pub fn observation_prob(&self, s: usize, mode: usize, input: HumanInput) -> f64 {
        self.modes[mode].observation_prob(self.states[s].cell, input)
    }

    /// Disagreement reward: `sum_{m_r} R_m(m_h, m_r) P(m_r | x, a_r)` with
    /// `R_m = 0` on agreement and `C` otherwise.
    pub fn disagreement_reward(&self, s: usize, human_mode: usize, a: Action) -> f64 {
        let c = self.task.config().disagreement_cost;
        let Some(p_r) = self.robot_mode_after(s, a) else { return 0.0 };
        p_r.probs().iter().enumerate().map(|(m_r, p)| if m_r == human_mode { 0.0 } else { c * p }).sum()
    }

    /// Immediate reward. A goal pays its reward regardless of the human mode;
    /// the step entering a goal collects it, and terminal goal states are
    /// worth nothing afterwards. Every other step costs the expected
    /// disagreement.
    pub fn reward(&self, s: usize, human_mode: usize, a: Action) -> f64 {
        if let Some(g) = self.goal_of[s] {
            return self.task.goals()[g].reward;
        }
        match self.successor(s, a).and_then(|n| self.goal_of[n]) {
            Some(g) => self.task.goals()[g].reward,
            None => self.disagreement_reward(s, human_mode, a),
        }
    }

    /// Reward vector over hidden states for taking `a` in `s`.
    pub fn reward_vector(&self, s: usize, a: Action) -> Vec<f64> {
        let per_mode: Vec<f64> = (0..self.n_modes()).map(|m| self.reward(s, m, a)).collect();
        (0..self.n_alpha()).flat_map(|_| per_mode.iter().copied()).collect()
    }

    /// Belief update after the robot takes `a` in `s` and the human then gives
    /// `input` at the successor. Adaptability is carried through unchanged.
    pub fn joint_belief_update(&self, b: &JointBelief, s: usize, a: Action, input: HumanInput) -> Result<BeliefUpdate> {
        let next = self
            .successor(s, a)
            .ok_or_else(|| Error::Inapplicable { cell: self.states[s].cell, action: a })?;
        let nm = self.n_modes();
        let mut predicted = vec![0.0; self.n_hidden()];
        for ai in 0..self.n_alpha() {
            let ker = self.mode_kernel(s, a, ai);
            for m in 0..nm {
                let w = b.get(ai, m);
                if w == 0.0 {
                    continue;
                }
                for m2 in 0..nm {
                    predicted[ai * nm + m2] += ker[m * nm + m2] * w;
                }
            }
        }
        Ok(self.weigh(predicted, next, input))
    }

    /// Observation-only update, used for the first input of an episode when no
    /// robot action has happened yet.
    pub fn observe(&self, b: &JointBelief, s: usize, input: HumanInput) -> BeliefUpdate {
        self.weigh(b.probs().to_vec(), s, input)
    }

    fn weigh(&self, predicted: Vec<f64>, s: usize, input: HumanInput) -> BeliefUpdate {
        let nm = self.n_modes();
        let weighted: Vec<f64> = predicted
            .iter()
            .enumerate()
            .map(|(h, p)| p * self.observation_prob(s, h % nm, input))
            .collect();
        match JointBelief::from_weights(self.n_alpha(), nm, weighted) {
            Some(belief) => BeliefUpdate { belief, next_state: s, degenerate: false },
            None => BeliefUpdate {
                belief: JointBelief::from_weights(self.n_alpha(), nm, predicted).expect("normalized prior"),
                next_state: s,
                degenerate: true,
            },
        }
    }

    /// Plain-text dump of the model: states, transitions, robot-mode
    /// estimates, rewards and observation likelihoods.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        let labels: Vec<String> = self.modes.iter().map(|m| m.label()).collect();
        let _ = writeln!(out, "# mutadapt momdp v1");
        let _ = writeln!(out, "discount {:?}", self.discount());
        let _ = writeln!(out, "alpha_grid {}", join(self.alpha_grid.iter().map(|a| format!("{a:?}"))));
        let _ = writeln!(out, "modes {}", labels.join(" "));
        let _ = writeln!(out, "observable_states {}", self.n_states());
        let _ = writeln!(out, "hidden_states {}", self.n_hidden());
        let _ = writeln!(out, "total_states {}", self.total_states());
        let _ = writeln!(out, "start {}", self.start);
        for (i, s) in self.states.iter().enumerate() {
            let goal = self.goal_of[i].map_or("-".to_string(), |g| self.task.goals()[g].id.clone());
            let _ = writeln!(out, "state {i} {} {} {} goal={goal}", s.cell.col, s.cell.row, s.history);
        }
        for i in 0..self.n_states() {
            for a in self.applicable(i).collect::<Vec<_>>() {
                let j = self.successor(i, a).unwrap();
                let p_r = self.robot_mode_after(i, a).unwrap();
                let _ = writeln!(out, "transition {i} {} {j}", a.code());
                let _ = writeln!(out, "robot_mode {i} {} {}", a.code(), join(p_r.probs().iter().map(|p| format!("{p:?}"))));
                let r = (0..self.n_modes()).map(|m| format!("{:?}", self.reward(i, m, a)));
                let _ = writeln!(out, "reward {i} {} {}", a.code(), join(r));
            }
        }
        for i in 0..self.n_states() {
            for a in Action::ALL {
                let o = (0..self.n_modes()).map(|m| format!("{:?}", self.observation_prob(i, m, Some(a))));
                let _ = writeln!(out, "observation {i} {} {}", a.code(), join(o));
            }
        }
        out
    }
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(" ")
}
