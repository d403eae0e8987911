use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mutadapt::baselines::make_mutual;
use mutadapt::modal::build_modes;
use mutadapt::momdp::assemble;
use mutadapt::sim::{run_experiment, seeded_trial, DEFAULT_HORIZON};
use mutadapt::solver::{exact_finite_horizon, solve, DEFAULT_SEARCH_CAP};
use mutadapt::{Action, SolverParams, TaskConfig, TaskModel};
use std::hint::black_box;

fn planner(c: &mut Criterion) {
    let task = TaskModel::new(TaskConfig::default()).unwrap();
    let modes = build_modes(&task).unwrap();
    let model = assemble(&task, modes.clone()).unwrap();
    let policy = make_mutual(&task, &modes, &SolverParams::default()).unwrap();
    let s0 = model.start_state();

    c.bench_function("build_modes/default", |b| b.iter(|| build_modes(black_box(&task)).unwrap()));
    c.bench_function("assemble/default", |b| b.iter(|| assemble(&task, modes.clone()).unwrap()));
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("default", |b| b.iter(|| solve(&model, SolverParams::default()).unwrap()));
    g.finish();

    let b0 = model.uniform_belief();
    c.bench_function("belief_update", |b| {
        b.iter(|| model.joint_belief_update(black_box(&b0), s0, Action::Forward, Some(Action::Left)).unwrap())
    });
    let art = policy.artifact().unwrap();
    c.bench_function("select_action", |b| b.iter(|| art.select_action(s0, black_box(&b0))));
    c.bench_function("trial/default", |b| {
        b.iter_batched(|| 7u64, |seed| seeded_trial(&policy, 0.5, 0, DEFAULT_HORIZON, seed).unwrap(), BatchSize::SmallInput)
    });
    let mut g = c.benchmark_group("experiment");
    g.sample_size(10);
    g.bench_function("5x200", |b| b.iter(|| run_experiment(&policy, &[0.0, 0.25, 0.5, 0.75, 1.0], 200, 1, 0, DEFAULT_HORIZON).unwrap()));
    g.finish();

    let corridor = TaskModel::new(TaskConfig::corridor(5)).unwrap();
    let cm = assemble(&corridor, build_modes(&corridor).unwrap()).unwrap();
    c.bench_function("exact/corridor5_h4", |b| {
        b.iter(|| exact_finite_horizon(&cm, cm.start_state(), &cm.uniform_belief(), 4, DEFAULT_SEARCH_CAP).unwrap())
    });
}

criterion_group!(benches, planner);
criterion_main!(benches);
