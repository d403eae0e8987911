//! Run configuration file.
//!
//! ```toml
//! override_threshold = 0.85   # (0.5, 1]
//! horizon = 40                # step cap per trial
//!
//! [task]                      # any TaskConfig field; omitted ones keep the default task
//! discount = 0.9
//!
//! [solver]
//! belief_points = 500
//! max_iterations = 1000
//! tolerance = 1e-6
//! seed = 0
//! exploration = 0.3
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use mutadapt::sim::DEFAULT_HORIZON;
use mutadapt::solver::DEFAULT_OVERRIDE_THRESHOLD;
use mutadapt::{SolverParams, TaskConfig, TaskModel};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub solver: SolverParams,
    pub override_threshold: f64,
    pub horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            solver: SolverParams::default(),
            override_threshold: DEFAULT_OVERRIDE_THRESHOLD,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn task_model(&self) -> Result<TaskModel> {
        Ok(TaskModel::new(self.task.clone())?)
    }
}
