mod config;
mod serve;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mutadapt::baselines::{from_artifact, make_condition};
use mutadapt::modal::build_modes;
use mutadapt::session::{SessionManager, DEFAULT_CONFIG};
use mutadapt::sim::{default_initial_mode, run_experiment, run_population, runs_to_csv, seeded_trial, summaries_to_csv};
use mutadapt::{Condition, ConditionPolicy, PolicyArtifact, TaskModel};
use serde_json::json;

use config::RunConfig;

/// Mutual-adaptation planning for shared autonomy.
#[derive(Parser)]
#[command(name = "mutadapt", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, env = "MUTADAPT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a planned condition and write its policy artifact.
    Solve {
        #[arg(long, default_value = "mutual")]
        condition: Condition,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch of simulated users; writes one CSV row per run.
    Simulate {
        #[command(flatten)]
        policy: PolicyArgs,
        /// Adaptability values, comma separated; defaults to the task grid.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        user: UserArgs,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One seeded trial as a JSON log.
    Trace {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        user: UserArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Performance over the adaptability grid for every condition, plus a
    /// uniform-adaptability population.
    Sweep {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        user: UserArgs,
        /// Directory for `curve_<condition>.csv`, `runs_<condition>.csv`
        /// and `summary.json`.
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
    /// Serve interactive sessions over HTTP and WebSocket.
    Serve {
        #[arg(long, env = "MUTADAPT_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory holding `oneway.policy` and `mutual.policy`; solved at
        /// startup when absent.
        #[arg(long)]
        policy_dir: Option<PathBuf>,
    },
    /// Describe the task model.
    Inspect {
        /// Also print the modal policy tables.
        #[arg(long)]
        modes: bool,
        /// Also print the full state, transition and reward listing.
        #[arg(long)]
        model: bool,
    },
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, default_value = "mutual")]
    condition: Condition,
    /// Load a solved policy instead of solving.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct UserArgs {
    /// Initial mode label of the simulated users; defaults to the mode of
    /// the lowest-reward goal.
    #[arg(long)]
    initial_mode: Option<String>,
}

fn build_policy(cfg: &RunConfig, task: &TaskModel, condition: Condition, artifact: Option<&Path>) -> Result<ConditionPolicy> {
    let policy = match artifact {
        Some(path) => from_artifact(condition, task, PolicyArtifact::load(path).with_context(|| format!("loading {}", path.display()))?)?,
        None => {
            let modes = build_modes(task)?;
            let start = std::time::Instant::now();
            let p = make_condition(condition, task, &modes, &cfg.solver)?;
            if let Some(a) = p.artifact() {
                let s = a.stats();
                tracing::info!(%condition, iterations = s.iterations, points = s.belief_points, converged = s.converged, gap = s.gap(), secs = start.elapsed().as_secs_f64(), "solved");
            }
            p
        }
    };
    Ok(policy.with_threshold(cfg.override_threshold)?)
}

fn initial_mode(task: &TaskModel, label: Option<&str>) -> Result<usize> {
    let modes = build_modes(task)?;
    match label {
        None => Ok(default_initial_mode(task, &modes)),
        Some(l) => modes.iter().position(|m| m.label() == l).with_context(|| {
            let known: Vec<String> = modes.iter().map(|m| m.label()).collect();
            format!("unknown mode `{l}`; expected one of {}", known.join(", "))
        }),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let task = cfg.task_model()?;
    match cli.command {
        Command::Solve { condition, out } => {
            let p = build_policy(&cfg, &task, condition, None)?;
            let Some(a) = p.artifact() else { bail!("the `{condition}` condition has nothing to solve") };
            a.save(&out)?;
            let s = a.stats();
            println!("wrote {} (lower {:.6}, upper {:.6}, converged {})", out.display(), s.lower_bound, s.upper_bound, s.converged);
        }
        Command::Simulate { policy, alpha, runs, seed, user, out } => {
            let p = build_policy(&cfg, &task, policy.condition, policy.policy.as_deref())?;
            let alphas = if alpha.is_empty() { task.config().alpha_grid.clone() } else { alpha };
            let mode = initial_mode(&task, user.initial_mode.as_deref())?;
            let r = run_experiment(&p, &alphas, runs, seed, mode, cfg.horizon)?;
            for s in &r.summaries {
                tracing::info!(alpha = s.alpha, mean = s.mean, se = s.std_error, non_terminated = s.non_terminated, "summary");
            }
            emit(out.as_deref(), &runs_to_csv(&r.runs))?;
        }
        Command::Trace { policy, alpha, seed, user, out } => {
            let p = build_policy(&cfg, &task, policy.condition, policy.policy.as_deref())?;
            let mode = initial_mode(&task, user.initial_mode.as_deref())?;
            let log = seeded_trial(&p, alpha, mode, cfg.horizon, seed)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&log)? + "\n"))?;
        }
        Command::Sweep { runs, seed, user, out_dir } => {
            std::fs::create_dir_all(&out_dir)?;
            let mode = initial_mode(&task, user.initial_mode.as_deref())?;
            let grid = task.config().alpha_grid.clone();
            let mut summary = serde_json::Map::new();
            for c in Condition::ALL {
                let p = build_policy(&cfg, &task, c, None)?;
                let r = run_experiment(&p, &grid, runs, seed, mode, cfg.horizon)?;
                std::fs::write(out_dir.join(format!("curve_{c}.csv")), summaries_to_csv(&r.summaries))?;
                std::fs::write(out_dir.join(format!("runs_{c}.csv")), runs_to_csv(&r.runs))?;
                let (pop, _) = run_population(&p, &grid, runs, seed, mode, cfg.horizon)?;
                println!("{c:>6}: {}  population {:.3} ± {:.3}", r.summaries.iter().map(|s| format!("{:.3}", s.mean)).collect::<Vec<_>>().join(" "), pop.mean, pop.std_error);
                summary.insert(c.to_string(), json!({ "curve": r.summaries, "population": pop }));
            }
            summary.insert("runs".into(), json!(runs));
            summary.insert("seed".into(), json!(seed));
            summary.insert("alpha_grid".into(), json!(grid));
            std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        }
        Command::Serve { bind, policy_dir } => {
            let mut manager = SessionManager::new();
            for c in Condition::ALL {
                let path = policy_dir.as_ref().map(|d| d.join(format!("{c}.policy"))).filter(|p| p.exists());
                let path = if c == Condition::NoAdaptation { None } else { path };
                manager.register(DEFAULT_CONFIG, build_policy(&cfg, &task, c, path.as_deref())?);
            }
            tokio::runtime::Runtime::new()?.block_on(serve::run(manager, &bind))?;
        }
        Command::Inspect { modes, model } => {
            let ms = build_modes(&task)?;
            let m = mutadapt::momdp::assemble(&task, ms.clone())?;
            let c = task.config();
            println!("grid {}x{}, {} blocked cells, start {}", c.width, c.height, c.blocked.len(), c.start);
            for g in task.goals() {
                println!("goal {} at {} reward {}", g.id, g.cell, g.reward);
            }
            println!("memory k={}, discount {}, temperature {}, disagreement cost {}", c.memory, c.discount, c.temperature, c.disagreement_cost);
            println!("alpha grid {:?}", c.alpha_grid);
            println!("states: {} observable x {} hidden = {}", m.n_states(), m.n_hidden(), m.total_states());
            if modes {
                for p in &ms {
                    println!("\n{}", p.to_table_string());
                }
            }
            if model {
                println!("\n{}", m.export_text());
            }
        }
    }
    Ok(())
}
