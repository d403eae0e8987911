//! Simulated bounded-memory users, trial execution and batch experiments.
//!
//! Per-trial seeds are derived from the master seed with
//! [`trial_seed`]: `splitmix64(master ^ splitmix64(alpha_index << 32 | run))`.
//! Trials are independent, so running them in parallel does not change any
//! result.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Condition, ConditionPolicy};
use crate::error::{Error, Result};
use crate::inference::{infer_robot_mode, Adaptability, ModeDistribution};
use crate::modal::ModalPolicy;
use crate::momdp::{JointBelief, MomdpModel};
use crate::task::{Action, Cell, History, HumanInput, TaskModel};

pub const DEFAULT_HORIZON: usize = 40;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn trial_seed(master: u64, alpha_index: usize, run: usize) -> u64 {
    splitmix64(master ^ splitmix64(((alpha_index as u64) << 32) | run as u64))
}

/// Mode of the lowest-reward goal (the first one on ties). Simulated users
/// start here unless told otherwise.
pub fn default_initial_mode(task: &TaskModel, modes: &[ModalPolicy]) -> usize {
    let mut goals: Vec<_> = task.goals().iter().collect();
    goals.sort_by(|a, b| a.reward.total_cmp(&b.reward));
    goals
        .iter()
        .find_map(|g| modes.iter().position(|m| m.goal_id() == g.id))
        .unwrap_or(0)
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let mut u = rng.gen::<f64>() * probs.iter().sum::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            if u < *p {
                return i;
            }
            u -= p;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).expect("distribution with positive mass")
}

/// Bounded-memory user with fixed adaptability.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    alpha: Adaptability,
    mode: usize,
    memory: History,
    k: usize,
    rng: ChaCha8Rng,
}

/// What the user did in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStep {
    pub input: Action,
    /// Robot-mode estimate from memory; `None` before the robot has moved.
    pub perceived: Option<ModeDistribution>,
    pub switched: bool,
}

impl SimulatedUser {
    pub fn new(alpha: Adaptability, mode: usize, k: usize, seed: u64) -> Self {
        Self { alpha, mode, memory: History::empty(), k, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.value()
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn memory(&self) -> &History {
        &self.memory
    }

    /// Records the robot's last (cell, action) pair, re-estimates the robot
    /// mode from memory, samples a concrete robot mode and adopts it with
    /// probability alpha, then draws an input at `cell` from the current mode.
    pub fn step(&mut self, cell: Cell, last_robot: Option<(Cell, Action)>, modes: &[ModalPolicy]) -> UserStep {
        let mut perceived = None;
        let mut switched = false;
        if let Some((c, a)) = last_robot {
            self.memory = self.memory.pushed(c, a, self.k);
            let p_r = infer_robot_mode(self.memory.entries(), modes);
            let m_r = sample(&mut self.rng, p_r.probs());
            if self.rng.gen::<f64>() < self.alpha.value() && m_r != self.mode {
                self.mode = m_r;
                switched = true;
            }
            perceived = Some(p_r);
        }
        let dist = modes[self.mode].distribution(cell).copied().unwrap_or([1.0 / 3.0; 3]);
        let input = Action::ALL[sample(&mut self.rng, &dist)];
        UserStep { input, perceived, switched }
    }
}

/// Belief summary sent over the wire and stored in logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub alpha: Vec<f64>,
    pub mode: BTreeMap<String, f64>,
    /// False when the condition ignores the belief.
    pub used: bool,
}

impl BeliefSnapshot {
    pub fn of(model: &MomdpModel, b: &JointBelief, used: bool) -> Self {
        let mode = model.modes().iter().map(|m| m.label()).zip(b.mode_marginal()).collect();
        Self { alpha: b.alpha_marginal(), mode, used }
    }
}

/// Robot-side state of one interaction: observable state, belief and the
/// last robot move. Shared by the trial runner and the session service so
/// both execute the same loop.
#[derive(Debug, Clone)]
pub struct Episode {
    state: usize,
    belief: JointBelief,
    last: Option<(usize, Action)>,
    steps: usize,
}

/// Outcome of one [`Episode::advance`].
#[derive(Debug, Clone)]
pub struct Advance {
    /// Observable state the action was taken in.
    pub from: usize,
    pub action: Action,
    /// Belief after incorporating the input; the action was chosen on it.
    pub belief: JointBelief,
    pub degenerate: bool,
    /// Goal index if the move entered a goal.
    pub goal: Option<usize>,
}

impl Episode {
    pub fn new(model: &MomdpModel) -> Self {
        Self { state: model.start_state(), belief: model.uniform_belief(), last: None, steps: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn belief(&self) -> &JointBelief {
        &self.belief
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Robot's previous (cell, action), as the user would remember it.
    pub fn last_pair(&self, model: &MomdpModel) -> Option<(Cell, Action)> {
        self.last.map(|(s, a)| (model.state(s).cell, a))
    }

    pub fn is_done(&self, model: &MomdpModel) -> bool {
        model.is_terminal(self.state)
    }

    /// Folds `input` into the belief (observation only on the first step),
    /// picks the robot action and moves.
    pub fn advance(&mut self, policy: &ConditionPolicy, input: HumanInput) -> Result<Advance> {
        let model = policy.model();
        if self.is_done(model) {
            return Err(Error::EpisodeOver);
        }
        let update = match self.last {
            None => model.observe(&self.belief, self.state, input),
            Some((s, a)) => model.joint_belief_update(&self.belief, s, a, input)?,
        };
        debug_assert_eq!(update.next_state, self.state);
        self.belief = update.belief;
        let from = self.state;
        let action = policy.act(from, &self.belief, input);
        let next = model.successor(from, action).ok_or(Error::Inapplicable { cell: model.state(from).cell, action })?;
        self.last = Some((from, action));
        self.state = next;
        self.steps += 1;
        Ok(Advance { from, action, belief: self.belief.clone(), degenerate: update.degenerate, goal: model.goal_of(next) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub cell: Cell,
    pub input: HumanInput,
    pub robot_action: Action,
    pub belief: BeliefSnapshot,
    /// Full joint belief, adaptability-major.
    pub joint: Vec<f64>,
    /// User's true mode when the robot acted.
    pub user_mode: String,
    /// User's robot-mode estimate this step.
    pub perceived: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub condition: Condition,
    pub alpha: f64,
    pub initial_mode: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub goal: Option<String>,
    /// Reward of the goal reached, 0 if none was.
    pub goal_reward: f64,
    /// Model reward summed along the trajectory against the true mode.
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub terminated: bool,
}

/// Runs one interaction until a goal or `horizon` steps.
pub fn run_trial(policy: &ConditionPolicy, mut user: SimulatedUser, horizon: usize, seed: u64) -> Result<TrialLog> {
    let model = policy.model();
    let labels: Vec<String> = model.modes().iter().map(|m| m.label()).collect();
    let initial_mode = labels[user.mode()].clone();
    let mut episode = Episode::new(model);
    let mut steps = Vec::new();
    let (mut undiscounted, mut discounted, mut weight) = (0.0, 0.0, 1.0);
    let mut goal = None;
    while steps.len() < horizon && !episode.is_done(model) {
        let cell = model.state(episode.state()).cell;
        let u = user.step(cell, episode.last_pair(model), model.modes());
        let adv = episode.advance(policy, Some(u.input))?;
        let r = model.reward(adv.from, user.mode(), adv.action);
        undiscounted += r;
        discounted += weight * r;
        weight *= model.discount();
        steps.push(StepRecord {
            step: steps.len(),
            cell,
            input: Some(u.input),
            robot_action: adv.action,
            belief: BeliefSnapshot::of(model, &adv.belief, policy.uses_belief()),
            joint: adv.belief.probs().to_vec(),
            user_mode: labels[user.mode()].clone(),
            perceived: u.perceived.map(|p| p.probs().to_vec()),
        });
        goal = adv.goal;
    }
    let reached = goal.map(|g| &model.task().goals()[g]);
    Ok(TrialLog {
        condition: policy.condition(),
        alpha: user.alpha(),
        initial_mode,
        seed,
        steps,
        goal: reached.map(|g| g.id.clone()),
        goal_reward: reached.map_or(0.0, |g| g.reward),
        undiscounted_return: undiscounted,
        discounted_return: discounted,
        terminated: reached.is_some(),
    })
}

/// Seeded trial for adaptability `alpha` and starting mode `mode`.
pub fn seeded_trial(policy: &ConditionPolicy, alpha: f64, mode: usize, horizon: usize, seed: u64) -> Result<TrialLog> {
    let user = SimulatedUser::new(Adaptability::new(alpha)?, mode, policy.model().task().memory(), seed);
    run_trial(policy, user, horizon, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub alpha: f64,
    pub run: usize,
    pub goal: Option<String>,
    pub reward: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
    pub non_terminated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub condition: Condition,
    pub seed: u64,
    pub initial_mode: String,
    pub summaries: Vec<AlphaSummary>,
    pub runs: Vec<RunRecord>,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn record(log: &TrialLog, alpha: f64, run: usize) -> RunRecord {
    RunRecord { alpha, run, goal: log.goal.clone(), reward: log.goal_reward, steps: log.steps.len() }
}

pub fn summarize(alpha: f64, runs: &[RunRecord]) -> AlphaSummary {
    let rewards: Vec<f64> = runs.iter().map(|r| r.reward).collect();
    let (mean, std_error) = mean_and_se(&rewards);
    AlphaSummary { alpha, mean, std_error, runs: runs.len(), non_terminated: runs.iter().filter(|r| r.goal.is_none()).count() }
}

/// `runs` trials per adaptability value; performance is the reward of the
/// goal reached.
pub fn run_experiment(policy: &ConditionPolicy, alphas: &[f64], runs: usize, seed: u64, mode: usize, horizon: usize) -> Result<ExperimentResult> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let mut all = Vec::with_capacity(alphas.len() * runs);
    let mut summaries = Vec::with_capacity(alphas.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        let batch = (0..runs)
            .into_par_iter()
            .map(|r| seeded_trial(policy, alpha, mode, horizon, trial_seed(seed, ai, r)).map(|log| record(&log, alpha, r)))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(summarize(alpha, &batch));
        all.extend(batch);
    }
    Ok(ExperimentResult {
        condition: policy.condition(),
        seed,
        initial_mode: policy.model().modes()[mode].label(),
        summaries,
        runs: all,
    })
}

/// Mixed population: each run draws its adaptability uniformly from
/// `alphas` using its own trial seed.
pub fn run_population(policy: &ConditionPolicy, alphas: &[f64], runs: usize, seed: u64, mode: usize, horizon: usize) -> Result<(AlphaSummary, Vec<RunRecord>)> {
    if runs == 0 || alphas.is_empty() {
        return Err(Error::InvalidConfig("population needs runs and adaptability values".into()));
    }
    let batch = (0..runs)
        .into_par_iter()
        .map(|r| {
            let s = trial_seed(seed, usize::MAX >> 32, r);
            let alpha = alphas[ChaCha8Rng::seed_from_u64(s).gen_range(0..alphas.len())];
            seeded_trial(policy, alpha, mode, horizon, splitmix64(s)).map(|log| record(&log, alpha, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = summarize(f64::NAN, &batch);
    summary.alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
    Ok((summary, batch))
}

pub fn runs_to_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from("alpha,run,goal,reward,steps\n");
    for r in runs {
        let _ = writeln!(out, "{},{},{},{},{}", r.alpha, r.run, r.goal.as_deref().unwrap_or(""), r.reward, r.steps);
    }
    out
}

pub fn summaries_to_csv(summaries: &[AlphaSummary]) -> String {
    let mut out = String::from("alpha,mean,std_error,runs,non_terminated\n");
    for s in summaries {
        let _ = writeln!(out, "{},{},{},{},{}", s.alpha, s.mean, s.std_error, s.runs, s.non_terminated);
    }
    out
}
