//! Bounded-memory mode inference.
//!
//! Two inferences run side by side. The human attributes the robot's recent
//! actions to a robot mode, using only the last `k` (cell, action) pairs. The
//! robot tracks the human mode with a Bayes filter whose dynamics are the
//! adaptability-parameterized switching rule: the human adopts the perceived
//! robot mode with probability `alpha` and keeps their own with `1 - alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::ModalPolicy;
use crate::task::{Action, Cell, History, HumanInput};

/// Probability over modes, indexed like the mode list it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeDistribution(Vec<f64>);

impl ModeDistribution {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, mode: usize) -> Self {
        let mut p = vec![0.0; n];
        p[mode] = 1.0;
        Self(p)
    }

    /// Normalizes `weights`; an all-zero vector yields `None`.
    pub fn from_weights(weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        (total > 0.0 && total.is_finite()).then(|| Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, mode: usize) -> f64 {
        self.0[mode]
    }

    /// Index of the strictly most likely mode, `None` on a tie.
    pub fn unique_argmax(&self) -> Option<usize> {
        let (best, &p) = self.0.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        let tied = self.0.iter().enumerate().any(|(i, q)| i != best && (q - p).abs() <= 1e-12);
        (!tied).then_some(best)
    }
}

/// Human adaptability, the probability of adopting the perceived robot mode.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Adaptability(f64);

impl Adaptability {
    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidConfig(format!("adaptability must lie in [0, 1], got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Posterior over robot modes given a window of robot (cell, action) pairs,
/// `eta * prod_t m(x_t, a_t)`. Windows no mode can explain give the uniform
/// distribution.
pub fn infer_robot_mode(window: &[(Cell, Action)], modes: &[ModalPolicy]) -> ModeDistribution {
    let weights = modes
        .iter()
        .map(|m| window.iter().map(|&(c, a)| m.action_prob(c, a)).product())
        .collect();
    ModeDistribution::from_weights(weights).unwrap_or_else(|| ModeDistribution::uniform(modes.len()))
}

/// Robot-mode posterior after the robot takes `action` at `cell`, given the
/// preceding history. The window is the history extended by the current pair,
/// truncated to `k`.
pub fn infer_robot_mode_after(
    history: &History,
    cell: Cell,
    action: Action,
    k: usize,
    modes: &[ModalPolicy],
) -> ModeDistribution {
    infer_robot_mode(history.pushed(cell, action, k).entries(), modes)
}

/// `sum_{m_r} P(m' | alpha, m_h, m_r) P(m_r)` with the switching rule
/// `alpha` to `m_r`, `1 - alpha` to stay.
pub fn switch_distribution(alpha: f64, human_mode: usize, robot_mode: &ModeDistribution) -> ModeDistribution {
    let mut next = vec![0.0; robot_mode.len()];
    next[human_mode] += 1.0 - alpha;
    for (m_r, p) in robot_mode.probs().iter().enumerate() {
        next[m_r] += alpha * p;
    }
    ModeDistribution(next)
}

pub fn human_mode_transition(
    history: &History,
    cell: Cell,
    alpha: Adaptability,
    human_mode: usize,
    action: Action,
    k: usize,
    modes: &[ModalPolicy],
) -> ModeDistribution {
    let robot_mode = infer_robot_mode_after(history, cell, action, k, modes);
    switch_distribution(alpha.value(), human_mode, &robot_mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub posterior: ModeDistribution,
    /// The observation had zero likelihood under every predicted mode, so the
    /// prediction was kept without reweighting.
    pub degenerate: bool,
}

/// Predict with the adaptability kernel, then weight by the likelihood of the
/// human input at the new cell.
#[allow(clippy::too_many_arguments)]
pub fn filter_human_mode(
    belief: &ModeDistribution,
    history: &History,
    cell: Cell,
    alpha: Adaptability,
    action: Action,
    next_cell: Cell,
    input: HumanInput,
    k: usize,
    modes: &[ModalPolicy],
) -> FilterOutcome {
    let robot_mode = infer_robot_mode_after(history, cell, action, k, modes);
    let mut predicted = vec![0.0; modes.len()];
    for (m_h, b) in belief.probs().iter().enumerate() {
        if *b == 0.0 {
            continue;
        }
        let step = switch_distribution(alpha.value(), m_h, &robot_mode);
        for (m, p) in step.probs().iter().enumerate() {
            predicted[m] += p * b;
        }
    }
    let weighted = predicted
        .iter()
        .zip(modes)
        .map(|(p, m)| p * m.observation_prob(next_cell, input))
        .collect();
    match ModeDistribution::from_weights(weighted) {
        Some(posterior) => FilterOutcome { posterior, degenerate: false },
        None => FilterOutcome {
            posterior: ModeDistribution::from_weights(predicted).expect("prediction of a normalized belief"),
            degenerate: true,
        },
    }
}
