//! Robot policy computation.
//!
//! [`solve`] runs point-based value iteration with alpha-vectors over the
//! hidden (adaptability, mode) states, one vector set per observable state.
//! [`exact_finite_horizon`] is a brute-force expectimax used to check it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::momdp::{JointBelief, MomdpModel};
use crate::task::{Action, HumanInput};

pub const DEFAULT_OVERRIDE_THRESHOLD: f64 = 0.85;
pub const DEFAULT_SEARCH_CAP: u128 = 1_000_000_000;

const ARTIFACT_HEADER: &str = "# mutadapt policy v1";
/// Two beliefs at the same observable state closer than this (L1) are
/// treated as the same point.
const POINT_RESOLUTION: f64 = 1e-3;
const ROLLOUT_STEPS: usize = 40;
/// A sweep of backups is forced between expansions at least this often.
const EXPAND_EVERY: usize = 30;

/// Linear value function over hidden states at one observable state.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub state: usize,
    pub action: Action,
    pub values: Vec<f64>,
}

impl AlphaVector {
    pub fn value(&self, b: &JointBelief) -> f64 {
        b.dot(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Maximum number of belief points.
    pub belief_points: usize,
    /// Cap on backup sweeps.
    pub max_iterations: usize,
    /// Sweeps stop once no point value moves by more than this.
    pub tolerance: f64,
    pub seed: u64,
    /// Probability of a random action during point-collecting rollouts.
    pub exploration: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { belief_points: 500, max_iterations: 1000, tolerance: 1e-6, seed: 0, exploration: 0.3 }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.belief_points == 0 {
            return Err(Error::InvalidConfig("belief point budget must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("solver tolerance must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::InvalidConfig("exploration must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub belief_points: usize,
    pub converged: bool,
    /// Policy value at the start state under the uniform belief.
    pub lower_bound: f64,
    /// Fully observable upper bound at the same belief.
    pub upper_bound: f64,
}

impl SolveStats {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }
}

/// Solved policy: alpha-vector sets for every observable state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArtifact {
    discount: f64,
    alpha_grid: Vec<f64>,
    modes: Vec<String>,
    states: Vec<String>,
    vectors: Vec<Vec<AlphaVector>>,
    stats: SolveStats,
}

impl PolicyArtifact {
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn n_states(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self, s: usize) -> &[AlphaVector] {
        &self.vectors[s]
    }

    /// Vector maximizing the inner product with `b`; ties go to the earliest
    /// action in left < forward < right order, then to the earliest vector.
    pub fn best_vector(&self, s: usize, b: &JointBelief) -> &AlphaVector {
        best_of(&self.vectors[s], b)
    }

    pub fn value(&self, s: usize, b: &JointBelief) -> f64 {
        self.best_vector(s, b).value(b)
    }

    pub fn select_action(&self, s: usize, b: &JointBelief) -> Action {
        self.best_vector(s, b).action
    }

    /// Fails unless the artifact was solved for a model with the same
    /// discount, adaptability grid, modes and state table.
    pub fn check_model(&self, model: &MomdpModel) -> Result<()> {
        if self.discount.to_bits() != model.discount().to_bits() {
            return Err(Error::ArtifactMismatch(format!("discount {} vs {}", self.discount, model.discount())));
        }
        if self.alpha_grid != model.alpha_grid() {
            return Err(Error::ArtifactMismatch("adaptability grid differs".into()));
        }
        if self.modes != mode_labels(model) {
            return Err(Error::ArtifactMismatch("mode set differs".into()));
        }
        if self.states != state_labels(model) {
            return Err(Error::ArtifactMismatch("observable state table differs".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ARTIFACT_HEADER}");
        let _ = writeln!(out, "discount {:?}", self.discount);
        let _ = writeln!(out, "alpha_grid {}", join(self.alpha_grid.iter().map(|a| format!("{a:?}"))));
        let _ = writeln!(out, "modes {}", self.modes.join(" "));
        let _ = writeln!(out, "states {}", self.states.len());
        for (i, s) in self.states.iter().enumerate() {
            let _ = writeln!(out, "state {i} {s}");
        }
        let st = &self.stats;
        let _ = writeln!(out, "meta iterations {}", st.iterations);
        let _ = writeln!(out, "meta belief_points {}", st.belief_points);
        let _ = writeln!(out, "meta converged {}", st.converged);
        let _ = writeln!(out, "meta lower_bound {:?}", st.lower_bound);
        let _ = writeln!(out, "meta upper_bound {:?}", st.upper_bound);
        for set in &self.vectors {
            for v in set {
                let _ = writeln!(out, "vector {} {} {}", v.state, v.action.code(), join(v.values.iter().map(|x| format!("{x:?}"))));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, reason: &str| Error::Artifact { line, reason: reason.to_string() };
        match lines.next() {
            Some((_, l)) if l == ARTIFACT_HEADER => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            let rest = l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| bad(n, &format!("expected `{key}`")))?;
            Ok((n, rest.to_string()))
        };
        let (n, d) = field("discount")?;
        let discount = parse_f64(&d).ok_or_else(|| bad(n, "bad discount"))?;
        let (n, g) = field("alpha_grid")?;
        let alpha_grid = g.split(' ').map(parse_f64).collect::<Option<Vec<_>>>().ok_or_else(|| bad(n, "bad adaptability grid"))?;
        let (_, m) = field("modes")?;
        let modes: Vec<String> = m.split(' ').map(str::to_string).collect();
        let (n, c) = field("states")?;
        let count: usize = c.parse().map_err(|_| bad(n, "bad state count"))?;
        let mut states = Vec::with_capacity(count);
        for i in 0..count {
            let (n, rest) = field("state")?;
            let (idx, label) = rest.split_once(' ').ok_or_else(|| bad(n, "bad state line"))?;
            if idx.parse::<usize>().ok() != Some(i) {
                return Err(bad(n, "state indices out of order"));
            }
            states.push(label.to_string());
        }
        let mut meta = BTreeMap::new();
        for key in ["iterations", "belief_points", "converged", "lower_bound", "upper_bound"] {
            let (n, rest) = field("meta")?;
            let value = rest.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| bad(n, &format!("expected meta {key}")))?;
            meta.insert(key, (n, value.to_string()));
        }
        let meta_num = |key: &str| -> Result<f64> {
            let (n, v) = &meta[key];
            parse_f64(v).ok_or_else(|| bad(*n, &format!("bad {key}")))
        };
        let meta_int = |key: &str| -> Result<usize> {
            let (n, v) = &meta[key];
            v.parse().map_err(|_| bad(*n, &format!("bad {key}")))
        };
        let stats = SolveStats {
            iterations: meta_int("iterations")?,
            belief_points: meta_int("belief_points")?,
            converged: match meta["converged"].1.as_str() {
                "true" => true,
                "false" => false,
                _ => return Err(bad(meta["converged"].0, "bad converged flag")),
            },
            lower_bound: meta_num("lower_bound")?,
            upper_bound: meta_num("upper_bound")?,
        };
        let width = alpha_grid.len() * modes.len();
        let mut vectors: Vec<Vec<AlphaVector>> = vec![Vec::new(); count];
        let mut ended = false;
        for (n, l) in lines.by_ref() {
            if l == "end" {
                ended = true;
                break;
            }
            let mut parts = l.split(' ');
            if parts.next() != Some("vector") {
                return Err(bad(n, "expected `vector` or `end`"));
            }
            let state: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad(n, "bad vector state"))?;
            let action = parts
                .next()
                .and_then(|p| p.chars().next().filter(|_| p.len() == 1))
                .and_then(Action::from_code)
                .ok_or_else(|| bad(n, "bad vector action"))?;
            let values = parts.map(parse_f64).collect::<Option<Vec<_>>>().ok_or_else(|| bad(n, "bad vector value"))?;
            if state >= count {
                return Err(bad(n, "vector state out of range"));
            }
            if values.len() != width {
                return Err(bad(n, "vector length does not match the hidden state count"));
            }
            vectors[state].push(AlphaVector { state, action, values });
        }
        if !ended {
            return Err(bad(0, "missing `end`"));
        }
        if let Some(s) = vectors.iter().position(Vec::is_empty) {
            return Err(bad(0, &format!("state {s} has no vectors")));
        }
        Ok(Self { discount, alpha_grid, modes, states, vectors, stats })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(" ")
}

fn mode_labels(model: &MomdpModel) -> Vec<String> {
    model.modes().iter().map(|m| m.label()).collect()
}

fn state_labels(model: &MomdpModel) -> Vec<String> {
    model.states().iter().map(|s| s.to_string()).collect()
}

fn best_of<'a>(set: &'a [AlphaVector], b: &JointBelief) -> &'a AlphaVector {
    let mut best = &set[0];
    let mut best_v = best.value(b);
    for v in &set[1..] {
        let x = v.value(b);
        if x > best_v || (x == best_v && v.action < best.action) {
            best = v;
            best_v = x;
        }
    }
    best
}

/// Point-based solver state. [`solve`] drives it to completion; stepping it
/// by hand exposes the per-sweep point values.
pub struct PointSolver<'m> {
    model: &'m MomdpModel,
    params: SolverParams,
    points: Vec<(usize, JointBelief)>,
    by_state: Vec<Vec<usize>>,
    gamma: Vec<Vec<AlphaVector>>,
    upper: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    iterations: usize,
}

impl<'m> PointSolver<'m> {
    /// Starts from the blind lower bound `r_min / (1 - γ)` with one uniform
    /// belief per non-terminal observable state plus every hidden-state
    /// corner at the start, as far as the budget allows.
    pub fn new(model: &'m MomdpModel, params: SolverParams) -> Result<Self> {
        params.validate()?;
        let gamma_d = model.discount();
        if !(0.0..1.0).contains(&gamma_d) {
            return Err(Error::InvalidConfig("discount must lie in [0, 1)".into()));
        }
        let n_hidden = model.n_hidden();
        let r_min = model
            .task()
            .goals()
            .iter()
            .map(|g| g.reward)
            .fold(model.task().config().disagreement_cost.min(0.0), f64::min);
        let floor = r_min / (1.0 - gamma_d);
        let gamma = (0..model.n_states())
            .map(|s| {
                let action = model.applicable(s).next().expect("every state has an action");
                let fill = if model.is_terminal(s) { 0.0 } else { floor };
                vec![AlphaVector { state: s, action, values: vec![fill; n_hidden] }]
            })
            .collect();
        let mut solver = Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            points: Vec::new(),
            by_state: vec![Vec::new(); model.n_states()],
            gamma,
            upper: mdp_upper_bound(model),
            iterations: 0,
        };
        let mut order: Vec<usize> = (0..model.n_states()).filter(|s| !model.is_terminal(*s)).collect();
        order.sort_by_key(|s| *s != model.start_state());
        for s in order {
            solver.add_point(s, model.uniform_belief());
        }
        for h in 0..n_hidden {
            let s0 = model.start_state();
            solver.add_point(s0, JointBelief::point(model.n_alpha(), model.n_modes(), h / model.n_modes(), h % model.n_modes()));
        }
        Ok(solver)
    }

    pub fn points(&self) -> &[(usize, JointBelief)] {
        &self.points
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Current lower-bound value at every belief point.
    pub fn point_values(&self) -> Vec<f64> {
        self.points.iter().map(|(s, b)| best_of(&self.gamma[*s], b).value(b)).collect()
    }

    /// Fully observable upper bound at `(s, b)`.
    pub fn upper_bound(&self, s: usize, b: &JointBelief) -> f64 {
        b.dot(&self.upper[s])
    }

    fn add_point(&mut self, s: usize, b: JointBelief) -> bool {
        let near = self.by_state[s].iter().any(|&i| {
            self.points[i].1.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).sum::<f64>() < POINT_RESOLUTION
        });
        if near || self.points.len() >= self.params.belief_points {
            return false;
        }
        self.by_state[s].push(self.points.len());
        self.points.push((s, b));
        true
    }

    /// One synchronous sweep of backups over all points. A point keeps its
    /// previous best vector when the backup does not improve on it, so point
    /// values never decrease. Returns the largest change.
    pub fn backup(&mut self) -> f64 {
        let before = self.point_values();
        let fresh: Vec<AlphaVector> = self.points.par_iter().map(|(s, b)| self.backup_point(*s, b)).collect();
        let mut next: Vec<Option<Vec<AlphaVector>>> = vec![None; self.model.n_states()];
        for (i, ((s, b), v)) in self.points.iter().zip(fresh).enumerate() {
            let keep = if v.value(b) >= before[i] { v } else { best_of(&self.gamma[*s], b).clone() };
            let set = next[*s].get_or_insert_with(Vec::new);
            if !set.contains(&keep) {
                set.push(keep);
            }
        }
        for (s, set) in next.into_iter().enumerate() {
            if let Some(set) = set {
                self.gamma[s] = set;
            }
        }
        self.iterations += 1;
        self.point_values().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn backup_point(&self, s: usize, b: &JointBelief) -> AlphaVector {
        let m = self.model;
        let nm = m.n_modes();
        let nh = m.n_hidden();
        let discount = m.discount();
        let mut best: Option<(f64, AlphaVector)> = None;
        for a in m.applicable(s) {
            let next = m.successor(s, a).expect("applicable");
            let mut values = m.reward_vector(s, a);
            if !m.is_terminal(next) {
                for o in Action::ALL {
                    let obs: Vec<f64> = (0..nm).map(|mode| m.observation_prob(next, mode, Some(o))).collect();
                    let mut predicted = vec![0.0; nh];
                    for ai in 0..m.n_alpha() {
                        let ker = m.mode_kernel(s, a, ai);
                        for m1 in 0..nm {
                            let w = b.get(ai, m1);
                            if w == 0.0 {
                                continue;
                            }
                            for m2 in 0..nm {
                                predicted[ai * nm + m2] += w * ker[m1 * nm + m2] * obs[m2];
                            }
                        }
                    }
                    let target = &self.gamma[next];
                    let mut pick = &target[0];
                    let mut pick_v = dot(&predicted, &pick.values);
                    for v in &target[1..] {
                        let x = dot(&predicted, &v.values);
                        if x > pick_v {
                            pick = v;
                            pick_v = x;
                        }
                    }
                    for ai in 0..m.n_alpha() {
                        let ker = m.mode_kernel(s, a, ai);
                        for m1 in 0..nm {
                            let g: f64 = (0..nm).map(|m2| ker[m1 * nm + m2] * obs[m2] * pick.values[ai * nm + m2]).sum();
                            values[ai * nm + m1] += discount * g;
                        }
                    }
                }
            }
            let v = dot(b.probs(), &values);
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, AlphaVector { state: s, action: a, values }));
            }
        }
        best.expect("non-terminal state has an applicable action").1
    }

    /// Adds up to `count` points from seeded rollouts that follow the current
    /// policy, taking a random action with probability `exploration`. Returns
    /// the number added.
    pub fn expand(&mut self, count: usize) -> usize {
        let m = self.model;
        let nm = m.n_modes();
        let mut added = 0;
        let mut attempts = 0;
        while added < count && attempts < 20 * count.max(1) && self.points.len() < self.params.belief_points {
            attempts += 1;
            let ai = self.rng.gen_range(0..m.n_alpha());
            let mut mode = self.rng.gen_range(0..nm);
            let mut s = m.start_state();
            // Alternate between the uniform prior and the true hidden state as
            // the rollout's prior so that near-certain beliefs get points too.
            let prior = if attempts % 2 == 1 { m.uniform_belief() } else { JointBelief::point(m.n_alpha(), nm, ai, mode) };
            let first = self.sample_input(s, mode);
            let mut b = m.observe(&prior, s, Some(first)).belief;
            added += usize::from(self.add_point(s, b.clone()));
            for _ in 0..ROLLOUT_STEPS {
                if m.is_terminal(s) || added >= count {
                    break;
                }
                let options: Vec<Action> = m.applicable(s).collect();
                let a = if self.rng.gen::<f64>() < self.params.exploration {
                    options[self.rng.gen_range(0..options.len())]
                } else {
                    best_of(&self.gamma[s], &b).action
                };
                let ker = m.mode_kernel(s, a, ai);
                mode = sample(&mut self.rng, &ker[mode * nm..(mode + 1) * nm]);
                let next = m.successor(s, a).expect("applicable");
                if m.is_terminal(next) {
                    break;
                }
                let o = self.sample_input(next, mode);
                b = m.joint_belief_update(&b, s, a, Some(o)).expect("applicable").belief;
                s = next;
                added += usize::from(self.add_point(s, b.clone()));
            }
        }
        added
    }

    fn sample_input(&mut self, s: usize, mode: usize) -> Action {
        let probs: Vec<f64> = Action::ALL.iter().map(|a| self.model.observation_prob(s, mode, Some(*a))).collect();
        Action::ALL[sample(&mut self.rng, &probs)]
    }

    pub fn artifact(&self, converged: bool) -> PolicyArtifact {
        let m = self.model;
        let b0 = m.uniform_belief();
        let s0 = m.start_state();
        PolicyArtifact {
            discount: m.discount(),
            alpha_grid: m.alpha_grid().to_vec(),
            modes: mode_labels(m),
            states: state_labels(m),
            vectors: self.gamma.clone(),
            stats: SolveStats {
                iterations: self.iterations,
                belief_points: self.points.len(),
                converged,
                lower_bound: best_of(&self.gamma[s0], &b0).value(&b0),
                upper_bound: self.upper_bound(s0, &b0),
            },
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
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

/// Value iteration on the model with the hidden state revealed. Its values
/// bound the partially observable values from above.
fn mdp_upper_bound(model: &MomdpModel) -> Vec<Vec<f64>> {
    let nm = model.n_modes();
    let nh = model.n_hidden();
    let mut v = vec![vec![0.0; nh]; model.n_states()];
    for _ in 0..100_000 {
        let mut delta: f64 = 0.0;
        let mut next = v.clone();
        for s in (0..model.n_states()).filter(|s| !model.is_terminal(*s)) {
            for h in 0..nh {
                let (ai, m1) = (h / nm, h % nm);
                let best = model
                    .applicable(s)
                    .map(|a| {
                        let n = model.successor(s, a).unwrap();
                        let ker = model.mode_kernel(s, a, ai);
                        let future: f64 = (0..nm).map(|m2| ker[m1 * nm + m2] * v[n][ai * nm + m2]).sum();
                        model.reward(s, m1, a) + model.discount() * future
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s][h]).abs());
                next[s][h] = best;
            }
        }
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    v
}

/// Runs [`PointSolver`] until the point set is full and a sweep changes no
/// value by more than the tolerance, or the iteration cap is hit. In the
/// latter case the artifact is flagged as not converged.
pub fn solve(model: &MomdpModel, params: SolverParams) -> Result<PolicyArtifact> {
    let budget = params.belief_points;
    let (tol, cap) = (params.tolerance, params.max_iterations);
    let mut solver = PointSolver::new(model, params)?;
    let mut since_expand = 0;
    let mut exhausted = false;
    loop {
        let delta = solver.backup();
        since_expand += 1;
        let settled = delta <= tol;
        if settled && exhausted {
            return Ok(solver.artifact(true));
        }
        if solver.iterations() >= cap {
            return Ok(solver.artifact(false));
        }
        if !exhausted && (settled || since_expand >= EXPAND_EVERY) {
            since_expand = 0;
            let room = budget - solver.points().len();
            let added = solver.expand(room.min(solver.points().len().max(1)));
            exhausted = solver.points().len() >= budget || added == 0;
        }
    }
}

/// Result of the exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactValue {
    pub value: f64,
    /// Maximizing first action; `None` at horizon 0 or in a terminal state.
    pub action: Option<Action>,
}

/// Expectimax over every robot action and human input for `horizon` steps
/// with exact belief updates. Refuses when `(|A| * |Ω|)^horizon` exceeds `cap`.
pub fn exact_finite_horizon(model: &MomdpModel, s: usize, b: &JointBelief, horizon: usize, cap: u128) -> Result<ExactValue> {
    let branching = (Action::ALL.len() * Action::ALL.len()) as u128;
    let required = (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(branching)).unwrap_or(u128::MAX);
    if required > cap {
        return Err(Error::SearchBudget { required, cap });
    }
    Ok(expectimax(model, s, b, horizon))
}

fn expectimax(model: &MomdpModel, s: usize, b: &JointBelief, horizon: usize) -> ExactValue {
    if horizon == 0 || model.is_terminal(s) {
        return ExactValue { value: 0.0, action: None };
    }
    let nm = model.n_modes();
    let mut best = ExactValue { value: f64::NEG_INFINITY, action: None };
    for a in model.applicable(s) {
        let next = model.successor(s, a).expect("applicable");
        let mut q = b.dot(&model.reward_vector(s, a));
        if !model.is_terminal(next) && horizon > 1 {
            let predicted = model.joint_belief_update(b, s, a, None).expect("applicable").belief;
            for o in Action::ALL {
                let p_o: f64 = predicted
                    .probs()
                    .iter()
                    .enumerate()
                    .map(|(h, p)| p * model.observation_prob(next, h % nm, Some(o)))
                    .sum();
                if p_o > 0.0 {
                    let posterior = model.joint_belief_update(b, s, a, Some(o)).expect("applicable").belief;
                    q += model.discount() * p_o * expectimax(model, next, &posterior, horizon - 1).value;
                }
            }
        }
        if q > best.value {
            best = ExactValue { value: q, action: Some(a) };
        }
    }
    best
}

/// Confidence that the human mode equals the robot mode the human currently
/// perceives, read off the observable state's history. `None` when the
/// history is empty or does not single out one mode.
pub fn mode_agreement(model: &MomdpModel, s: usize, b: &JointBelief) -> Option<f64> {
    let state = model.state(s);
    if state.history.is_empty() {
        return None;
    }
    let perceived = crate::inference::infer_robot_mode(state.history.entries(), model.modes());
    perceived.unique_argmax().map(|m| b.mode_marginal()[m])
}

/// Follows the human input when the robot is at least `tau` confident that
/// both agree on the mode and the input is applicable; otherwise the policy
/// action.
pub fn act_with_override(policy: &PolicyArtifact, model: &MomdpModel, s: usize, b: &JointBelief, input: HumanInput, tau: f64) -> Action {
    if let Some(a) = input {
        let confident = mode_agreement(model, s, b).is_some_and(|c| c >= tau);
        if confident && model.successor(s, a).is_some() && !model.is_terminal(s) {
            return a;
        }
    }
    policy.select_action(s, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::build_modes;
    use crate::momdp::assemble;
    use crate::task::{TaskConfig, TaskModel};

    fn model(cfg: TaskConfig) -> MomdpModel {
        let t = TaskModel::new(cfg).unwrap();
        let m = build_modes(&t).unwrap();
        assemble(&t, m).unwrap()
    }

    /// Plain value iteration on the fully observed chain, written out
    /// independently of the solver.
    fn chain_values(m: &MomdpModel) -> Vec<f64> {
        let mut v = vec![0.0; m.n_states()];
        loop {
            let next: Vec<f64> = (0..m.n_states())
                .map(|s| {
                    if m.is_terminal(s) {
                        return 0.0;
                    }
                    m.applicable(s)
                        .map(|a| m.reward(s, 0, a) + m.discount() * v[m.successor(s, a).unwrap()])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-12 {
                return v;
            }
        }
    }

    #[test]
    fn single_hidden_state_matches_value_iteration() {
        let t = TaskModel::new(crate::task::test_funnel().with_alpha_grid(vec![0.0])).unwrap();
        let modes = build_modes(&t).unwrap();
        let m = assemble(&t, modes[..1].to_vec()).unwrap();
        let p = solve(&m, SolverParams::default()).unwrap();
        let oracle = chain_values(&m);
        let b = JointBelief::uniform(1, 1);
        for s in 0..m.n_states() {
            assert!((p.value(s, &b) - oracle[s]).abs() < 1e-6, "state {s}: {} vs {}", p.value(s, &b), oracle[s]);
        }
    }

    #[test]
    fn corridor_agrees_with_exhaustive_search() {
        let m = model(TaskConfig::corridor(5));
        let p = solve(&m, SolverParams::default()).unwrap();
        let s0 = m.start_state();
        let beliefs = [
            m.uniform_belief(),
            JointBelief::point(5, 2, 0, 0),
            JointBelief::point(5, 2, 4, 1),
            JointBelief::product(&[0.1, 0.1, 0.2, 0.3, 0.3], &[0.8, 0.2]),
        ];
        for b in &beliefs {
            let exact = exact_finite_horizon(&m, s0, b, 6, DEFAULT_SEARCH_CAP).unwrap();
            assert!((p.value(s0, b) - exact.value).abs() < 1e-3, "{} vs {}", p.value(s0, b), exact.value);
        }
    }

    #[test]
    fn point_values_never_decrease() {
        let m = model(crate::task::test_funnel());
        let mut solver = PointSolver::new(&m, SolverParams { belief_points: 200, ..Default::default() }).unwrap();
        let mut last = solver.point_values();
        for i in 0..60 {
            solver.backup();
            if i % 15 == 14 {
                solver.expand(40);
            }
            let now = solver.point_values();
            for (a, b) in last.iter().zip(&now) {
                assert!(b >= a, "iteration {i}: {a} -> {b}");
            }
            last = now;
        }
    }

    #[test]
    fn lower_bound_stays_below_upper_bound() {
        let m = model(TaskConfig::corridor(5));
        let p = solve(&m, SolverParams::default()).unwrap();
        assert!(p.stats().converged);
        assert!(p.stats().gap() >= -1e-9);
    }

    #[test]
    fn seeded_solve_is_bit_identical() {
        let m = model(TaskConfig::corridor(7));
        let params = SolverParams { seed: 42, belief_points: 120, ..Default::default() };
        let a = solve(&m, params.clone()).unwrap();
        let b = solve(&m, params).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn artifact_text_round_trips() {
        let m = model(TaskConfig::corridor(5));
        let p = solve(&m, SolverParams::default()).unwrap();
        let q = PolicyArtifact::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
        q.check_model(&m).unwrap();
        let dir = std::env::temp_dir().join(format!("mutadapt-artifact-{}", std::process::id()));
        p.save(&dir).unwrap();
        assert_eq!(PolicyArtifact::load(&dir).unwrap(), p);
        std::fs::remove_file(dir).unwrap();
    }

    #[test]
    fn artifact_rejects_other_models() {
        let p = solve(&model(TaskConfig::corridor(5)), SolverParams::default()).unwrap();
        assert!(p.check_model(&model(TaskConfig::corridor(7))).is_err());
        assert!(p.check_model(&model(TaskConfig::corridor(5).with_alpha_grid(vec![0.0, 1.0]))).is_err());
        assert!(PolicyArtifact::from_text("# mutadapt policy v1\ndiscount 0.9\n").is_err());
        assert!(PolicyArtifact::from_text("not a policy").is_err());
    }

    #[test]
    fn horizon_zero_and_one() {
        let m = model(TaskConfig::corridor(3));
        let s0 = m.start_state();
        let b = m.uniform_belief();
        assert_eq!(exact_finite_horizon(&m, s0, &b, 0, DEFAULT_SEARCH_CAP).unwrap(), ExactValue { value: 0.0, action: None });
        // Both moves end at a goal; the right one pays 11.
        let one = exact_finite_horizon(&m, s0, &b, 1, DEFAULT_SEARCH_CAP).unwrap();
        assert_eq!(one.action, Some(Action::Right));
        assert!((one.value - 11.0).abs() < 1e-12);
    }

    #[test]
    fn search_budget_is_enforced() {
        let m = model(TaskConfig::corridor(3));
        let err = exact_finite_horizon(&m, 0, &m.uniform_belief(), 3, 700).unwrap_err();
        assert!(matches!(err, Error::SearchBudget { required: 729, cap: 700 }));
    }

    #[test]
    fn override_follows_confident_inputs_only() {
        let m = model(TaskConfig::corridor(7));
        let p = solve(&m, SolverParams { belief_points: 60, ..Default::default() }).unwrap();
        let s0 = m.start_state();
        let s = m.successor(s0, Action::Left).unwrap();
        // The human saw a left move, so they perceive m_L.
        let sure_left = JointBelief::product(&[0.2; 5], &[0.95, 0.05]);
        let unsure = JointBelief::product(&[0.2; 5], &[0.5, 0.5]);
        assert!((mode_agreement(&m, s, &sure_left).unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(act_with_override(&p, &m, s, &sure_left, Some(Action::Left), 0.85), Action::Left);
        assert_eq!(act_with_override(&p, &m, s, &unsure, Some(Action::Left), 0.85), p.select_action(s, &unsure));
        assert_eq!(act_with_override(&p, &m, s, &sure_left, None, 0.85), p.select_action(s, &sure_left));
        // Nothing to agree on before the first move.
        assert_eq!(mode_agreement(&m, s0, &sure_left), None);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn value_sandwich(w in proptest::collection::vec(0.01f64..1.0, 10)) {
            static POLICY: std::sync::OnceLock<(MomdpModel, PolicyArtifact)> = std::sync::OnceLock::new();
            let (m, p) = POLICY.get_or_init(|| {
                let m = model(TaskConfig::corridor(5));
                let p = solve(&m, SolverParams::default()).unwrap();
                (m, p)
            });
            let b = JointBelief::from_weights(5, 2, w).unwrap();
            let s0 = m.start_state();
            let h = 4;
            let exact = exact_finite_horizon(m, s0, &b, h, DEFAULT_SEARCH_CAP).unwrap().value;
            let tail = m.discount().powi(h as i32) * 11.0 / (1.0 - m.discount());
            proptest::prop_assert!(p.value(s0, &b) <= exact + tail + 1e-9);
        }
    }
}
