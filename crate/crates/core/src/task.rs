//! Discrete shared-autonomy workspace.
//!
//! The robot moves on a grid of cells with three actions. Human inputs use the
//! same alphabet. Goals are absorbing cells, and the observable planning state
//! is the current cell together with the last `k` robot (cell, action) pairs.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid coordinate, `(column, row)`. Row 0 is nearest the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub col: i32,
    pub row: i32,
}

impl Cell {
    pub const fn new(col: i32, row: i32) -> Self {
        Self { col, row }
    }

    fn offset(self, action: Action) -> Cell {
        let (dc, dr) = action.delta();
        Cell::new(self.col + dc, self.row + dr)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([col, row]: [i32; 2]) -> Self {
        Cell::new(col, row)
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.col, c.row]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Robot action or human joystick direction. The derived ordering
/// (left < forward < right) is the tie-break order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Left,
    Forward,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Forward, Action::Right];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn delta(self) -> (i32, i32) {
        match self {
            Action::Left => (-1, 0),
            Action::Forward => (0, 1),
            Action::Right => (1, 0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Forward => "forward",
            Action::Right => "right",
        }
    }

    /// Single-letter code used in the text artifact formats.
    pub fn code(self) -> char {
        match self {
            Action::Left => 'L',
            Action::Forward => 'F',
            Action::Right => 'R',
        }
    }

    pub fn from_code(c: char) -> Option<Action> {
        match c {
            'L' => Some(Action::Left),
            'F' => Some(Action::Forward),
            'R' => Some(Action::Right),
            _ => None,
        }
    }

    /// Left-right reflection.
    pub fn mirrored(self) -> Action {
        match self {
            Action::Left => Action::Right,
            Action::Forward => Action::Forward,
            Action::Right => Action::Left,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "left" | "L" => Ok(Action::Left),
            "forward" | "F" => Ok(Action::Forward),
            "right" | "R" => Ok(Action::Right),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// A human input is an action or the null input (joystick left untouched).
pub type HumanInput = Option<Action>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub cell: Cell,
    pub reward: f64,
}

/// The last `k` robot (cell, action) pairs, most recent last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct History {
    entries: Vec<(Cell, Action)>,
}

impl History {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(Cell, Action)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(Cell, Action)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True while fewer than `k` interactions have happened.
    pub fn is_partial(&self, k: usize) -> bool {
        self.entries.len() < k
    }

    pub fn last(&self) -> Option<(Cell, Action)> {
        self.entries.last().copied()
    }

    /// Window extended by `(cell, action)` and truncated to the `k` most recent entries.
    pub fn pushed(&self, cell: Cell, action: Action, k: usize) -> History {
        let mut entries = Vec::with_capacity(k);
        let keep = k.saturating_sub(1).min(self.entries.len());
        entries.extend_from_slice(&self.entries[self.entries.len() - keep..]);
        if k > 0 {
            entries.push((cell, action));
        }
        History { entries }
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (c, a)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}{}", a.code())?;
        }
        f.write_str("]")
    }
}

pub fn push_history(h: &History, cell: Cell, action: Action, k: usize) -> History {
    h.pushed(cell, action, k)
}

/// Observable MOMDP state: current cell plus the bounded robot history.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservableState {
    pub cell: Cell,
    pub history: History,
}

impl fmt::Display for ObservableState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.cell, self.history)
    }
}

fn default_memory() -> usize {
    1
}

/// Declarative task description. This is what the TOML config file holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub width: i32,
    pub height: i32,
    /// Cells removed from the `width x height` rectangle.
    #[serde(default)]
    pub blocked: Vec<Cell>,
    pub start: Cell,
    pub goals: Vec<Goal>,
    /// Bounded-memory length `k`.
    #[serde(default = "default_memory")]
    pub memory: usize,
    pub alpha_grid: Vec<f64>,
    pub disagreement_cost: f64,
    pub discount: f64,
    /// Max-entropy temperature of the modal policies.
    pub temperature: f64,
}

impl Default for TaskConfig {
    /// The default workspace, see [`TaskConfig::DEFAULT_ROWS`].
    fn default() -> Self {
        Self::funnel(&Self::DEFAULT_ROWS)
    }
}

impl TaskConfig {
    /// Row widths of the default funnel, bottom to top. With `k = 1` it has
    /// 52 observable states.
    pub const DEFAULT_ROWS: [i32; 4] = [1, 5, 7, 11];

    /// Symmetric funnel: row `r` spans `row_widths[r]` cells centred on the
    /// middle column. The start is bottom-centre and the goals `L` (reward 10)
    /// and `R` (reward 11) occupy the two ends of the top row.
    pub fn funnel(row_widths: &[i32]) -> Self {
        assert!(!row_widths.is_empty() && row_widths.iter().all(|w| w % 2 == 1), "row widths must be odd");
        let width = *row_widths.iter().max().unwrap();
        let centre = width / 2;
        let mut blocked = Vec::new();
        for (row, w) in row_widths.iter().enumerate() {
            for col in 0..width {
                if (col - centre).abs() > w / 2 {
                    blocked.push(Cell::new(col, row as i32));
                }
            }
        }
        let top = row_widths.len() as i32 - 1;
        let half = row_widths[row_widths.len() - 1] / 2;
        Self {
            width,
            height: row_widths.len() as i32,
            blocked,
            start: Cell::new(centre, 0),
            goals: vec![
                Goal { id: "L".into(), cell: Cell::new(centre - half, top), reward: 10.0 },
                Goal { id: "R".into(), cell: Cell::new(centre + half, top), reward: 11.0 },
            ],
            memory: 1,
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            disagreement_cost: -0.32,
            discount: 0.9,
            temperature: 2.0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("task config always serializes")
    }

    /// One-row corridor of `len` cells with goals `L` and `R` at the two ends
    /// and the start in the middle. Used as a small exactly-solvable task.
    pub fn corridor(len: i32) -> Self {
        assert!(len >= 3 && len % 2 == 1, "corridor length must be odd and >= 3");
        Self {
            width: len,
            height: 1,
            blocked: Vec::new(),
            start: Cell::new(len / 2, 0),
            goals: vec![
                Goal { id: "L".into(), cell: Cell::new(0, 0), reward: 10.0 },
                Goal { id: "R".into(), cell: Cell::new(len - 1, 0), reward: 11.0 },
            ],
            ..Self::default()
        }
    }

    pub fn with_alpha_grid(mut self, grid: Vec<f64>) -> Self {
        self.alpha_grid = grid;
        self
    }

    /// Every goal reward set to `reward`.
    pub fn with_equal_rewards(mut self, reward: f64) -> Self {
        for g in &mut self.goals {
            g.reward = reward;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.width < 1 || self.height < 1 {
            return bad(format!("grid must be at least 1x1, got {}x{}", self.width, self.height));
        }
        if self.goals.is_empty() {
            return bad("at least one goal is required".into());
        }
        if self.memory < 1 {
            return bad("memory length k must be >= 1".into());
        }
        if self.alpha_grid.is_empty() {
            return bad("alpha grid is empty".into());
        }
        if self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alpha grid values must lie in [0, 1]".into());
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("alpha grid must be strictly increasing".into());
        }
        if !(self.disagreement_cost < 0.0) {
            return bad(format!("disagreement cost must be negative, got {}", self.disagreement_cost));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount must lie in [0, 1), got {}", self.discount));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        let mut ids = HashSet::new();
        let mut cells = HashSet::new();
        for g in &self.goals {
            if !ids.insert(g.id.as_str()) {
                return bad(format!("duplicate goal id {}", g.id));
            }
            if !cells.insert(g.cell) {
                return bad(format!("goals share cell {}", g.cell));
            }
            if !g.reward.is_finite() {
                return bad(format!("goal {} has a non-finite reward", g.id));
            }
        }
        Ok(())
    }
}

/// Validated, immutable task geometry.
#[derive(Debug, Clone)]
pub struct TaskModel {
    config: TaskConfig,
    open: Vec<bool>,
    goal_at: Vec<Option<usize>>,
}

impl TaskModel {
    pub fn new(config: TaskConfig) -> Result<Self> {
        config.validate()?;
        let n = (config.width * config.height) as usize;
        let mut open = vec![true; n];
        let mut model = Self { config, open: Vec::new(), goal_at: vec![None; n] };
        for &b in &model.config.blocked {
            if let Some(i) = model.raw_index(b) {
                open[i] = false;
            }
        }
        model.open = open;
        if !model.contains(model.config.start) {
            return Err(Error::InvalidConfig(format!(
                "start {} is outside the grid",
                model.config.start
            )));
        }
        for (gi, g) in model.config.goals.iter().enumerate() {
            if !model.contains(g.cell) {
                return Err(Error::InvalidConfig(format!("goal {} at {} is outside the grid", g.id, g.cell)));
            }
            let i = model.raw_index(g.cell).unwrap();
            model.goal_at[i] = Some(gi);
        }
        for cell in model.cells() {
            if !model.is_goal(cell) && model.applicable_actions(cell).is_empty() {
                return Err(Error::InvalidConfig(format!("cell {cell} has no applicable action")));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn memory(&self) -> usize {
        self.config.memory
    }

    pub fn start(&self) -> Cell {
        self.config.start
    }

    pub fn goals(&self) -> &[Goal] {
        &self.config.goals
    }

    pub fn goal_index(&self, cell: Cell) -> Option<usize> {
        self.raw_index(cell).and_then(|i| self.goal_at[i])
    }

    pub fn goal_at(&self, cell: Cell) -> Option<&Goal> {
        self.goal_index(cell).map(|i| &self.config.goals[i])
    }

    pub fn is_goal(&self, cell: Cell) -> bool {
        self.goal_index(cell).is_some()
    }

    pub fn goal_by_id(&self, id: &str) -> Option<&Goal> {
        self.config.goals.iter().find(|g| g.id == id)
    }

    /// The unique goal with the strictly largest reward, if there is one.
    pub fn optimal_goal(&self) -> Option<&Goal> {
        let best = self.config.goals.iter().map(|g| g.reward).fold(f64::NEG_INFINITY, f64::max);
        let mut it = self.config.goals.iter().filter(|g| g.reward == best);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }

    fn raw_index(&self, c: Cell) -> Option<usize> {
        (c.col >= 0 && c.row >= 0 && c.col < self.config.width && c.row < self.config.height)
            .then(|| (c.row * self.config.width + c.col) as usize)
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.raw_index(c).is_some_and(|i| self.open[i])
    }

    /// All open cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.config.height)
            .flat_map(move |row| (0..self.config.width).map(move |col| Cell::new(col, row)))
            .filter(|c| self.contains(*c))
    }

    /// Goals are absorbing, so every action is applicable there.
    pub fn is_applicable(&self, cell: Cell, action: Action) -> bool {
        self.contains(cell) && (self.is_goal(cell) || self.contains(cell.offset(action)))
    }

    pub fn applicable_actions(&self, cell: Cell) -> Vec<Action> {
        Action::ALL.into_iter().filter(|a| self.is_applicable(cell, *a)).collect()
    }

    /// Deterministic robot motion. Actions that would leave the workspace are
    /// rejected rather than clamped.
    pub fn transition(&self, cell: Cell, action: Action) -> Result<Cell> {
        if !self.is_applicable(cell, action) {
            return Err(Error::Inapplicable { cell, action });
        }
        if self.is_goal(cell) {
            return Ok(cell);
        }
        Ok(cell.offset(action))
    }

    /// Cell reflected about the vertical centre line of the grid.
    pub fn mirror(&self, c: Cell) -> Cell {
        Cell::new(self.config.width - 1 - c.col, c.row)
    }

    /// Every `(cell, history)` pair reachable from the start under any robot
    /// action sequence. Goals are terminal and not expanded. The result is
    /// sorted, so indices are stable across runs.
    pub fn enumerate_observable_states(&self) -> Vec<ObservableState> {
        let k = self.memory();
        let start = ObservableState { cell: self.start(), history: History::empty() };
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.clone());
        queue.push_back(start);
        while let Some(s) = queue.pop_front() {
            if self.is_goal(s.cell) {
                continue;
            }
            for a in self.applicable_actions(s.cell) {
                let next = ObservableState {
                    cell: self.transition(s.cell, a).expect("applicable"),
                    history: s.history.pushed(s.cell, a, k),
                };
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
        seen.into_iter().collect()
    }
}

/// Narrow six-row funnel used by unit tests that hard-code cells.
#[cfg(test)]
pub(crate) fn test_funnel() -> TaskConfig {
    TaskConfig::funnel(&[1, 3, 3, 5, 5, 7])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn funnel_task() -> TaskModel {
        TaskModel::new(test_funnel()).unwrap()
    }

    #[test]
    fn forward_step_moves_up_one_row() {
        let t = funnel_task();
        assert_eq!(t.transition(Cell::new(3, 0), Action::Forward).unwrap(), Cell::new(3, 1));
        assert_eq!(t.transition(Cell::new(3, 1), Action::Forward).unwrap(), Cell::new(3, 2));
    }

    #[test]
    fn goals_absorb_every_action() {
        let t = funnel_task();
        for g in t.goals() {
            for a in Action::ALL {
                assert_eq!(t.transition(g.cell, a).unwrap(), g.cell);
            }
        }
    }

    #[test]
    fn leaving_the_grid_is_an_error() {
        let cfg = TaskConfig {
            width: 4,
            height: 4,
            blocked: vec![],
            start: Cell::new(1, 0),
            goals: vec![Goal { id: "G".into(), cell: Cell::new(3, 3), reward: 1.0 }],
            ..TaskConfig::default()
        };
        let t = TaskModel::new(cfg).unwrap();
        let err = t.transition(Cell::new(0, 3), Action::Left).unwrap_err();
        assert!(matches!(err, Error::Inapplicable { action: Action::Left, .. }));
        // Blocked cells in the funnel are also inapplicable targets.
        let t = funnel_task();
        assert!(t.transition(Cell::new(3, 0), Action::Left).is_err());
    }

    #[test]
    fn history_window_examples() {
        let s0 = Cell::new(0, 0);
        let s1 = Cell::new(1, 0);
        let s2 = Cell::new(2, 0);
        let h = History::from_entries(vec![(s0, Action::Left)]);
        assert_eq!(push_history(&h, s1, Action::Forward, 1).entries(), &[(s1, Action::Forward)]);
        let h2 = push_history(&h, s1, Action::Forward, 2);
        assert!(h.is_partial(2));
        assert_eq!(h2.entries(), &[(s0, Action::Left), (s1, Action::Forward)]);
        assert!(!h2.is_partial(2));
        assert_eq!(
            push_history(&h2, s2, Action::Right, 2).entries(),
            &[(s1, Action::Forward), (s2, Action::Right)]
        );
    }

    #[test]
    fn default_task_has_52_observable_states() {
        let t = TaskModel::new(TaskConfig::default()).unwrap();
        assert_eq!(t.enumerate_observable_states().len(), 52);
        assert_eq!(funnel_task().enumerate_observable_states().len(), 52);
    }

    #[test]
    fn single_cell_goal_task_has_one_state() {
        let cfg = TaskConfig {
            width: 1,
            height: 1,
            blocked: vec![],
            start: Cell::new(0, 0),
            goals: vec![Goal { id: "G".into(), cell: Cell::new(0, 0), reward: 1.0 }],
            ..TaskConfig::default()
        };
        assert_eq!(TaskModel::new(cfg).unwrap().enumerate_observable_states().len(), 1);
    }

    /// Independent BFS over (cell, last action) pairs for k = 1.
    fn bfs_count_k1(t: &TaskModel) -> usize {
        let mut seen = HashSet::new();
        let mut frontier = vec![(t.start(), None::<Action>)];
        seen.insert((t.start(), None));
        while let Some((c, _)) = frontier.pop() {
            if t.is_goal(c) {
                continue;
            }
            for a in Action::ALL {
                let (dc, dr) = a.delta();
                let n = Cell::new(c.col + dc, c.row + dr);
                if t.contains(n) && seen.insert((n, Some(a))) {
                    frontier.push((n, Some(a)));
                }
            }
        }
        seen.len()
    }

    #[test]
    fn corridor_count_matches_bfs_oracle() {
        let t = TaskModel::new(TaskConfig::corridor(3)).unwrap();
        let n = t.enumerate_observable_states().len();
        // start, then left into L and right into R.
        assert_eq!(n, 3);
        assert_eq!(n, bfs_count_k1(&t));
        let t5 = TaskModel::new(TaskConfig::corridor(5)).unwrap();
        assert_eq!(t5.enumerate_observable_states().len(), bfs_count_k1(&t5));
        assert_eq!(funnel_task().enumerate_observable_states().len(), bfs_count_k1(&funnel_task()));
    }

    #[test]
    fn enumeration_is_closed_under_transition() {
        let t = funnel_task();
        let states = t.enumerate_observable_states();
        let set: HashSet<_> = states.iter().cloned().collect();
        for s in &states {
            if t.is_goal(s.cell) {
                continue;
            }
            for a in t.applicable_actions(s.cell) {
                let n = ObservableState {
                    cell: t.transition(s.cell, a).unwrap(),
                    history: s.history.pushed(s.cell, a, t.memory()),
                };
                assert!(set.contains(&n), "{n} missing");
            }
        }
        let mut sorted = states.clone();
        sorted.sort();
        assert_eq!(sorted, states);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad = [
            TaskConfig { disagreement_cost: 0.1, ..TaskConfig::default() },
            TaskConfig { discount: 1.0, ..TaskConfig::default() },
            TaskConfig { alpha_grid: vec![0.5, 0.25], ..TaskConfig::default() },
            TaskConfig { alpha_grid: vec![0.0, 1.5], ..TaskConfig::default() },
            TaskConfig { temperature: 0.0, ..TaskConfig::default() },
            TaskConfig { memory: 0, ..TaskConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(TaskModel::new(cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TaskConfig::default();
        let text = cfg.to_toml();
        assert_eq!(TaskConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn optimal_goal_requires_a_strict_maximum() {
        assert_eq!(funnel_task().optimal_goal().unwrap().id, "R");
        let eq = TaskModel::new(TaskConfig::default().with_equal_rewards(10.0)).unwrap();
        assert!(eq.optimal_goal().is_none());
    }
}
