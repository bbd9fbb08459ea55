//! Criterion benches: per-step cost of both plant backends, the control law,
//! and the sweep orchestration with the rayon path against the sequential
//! fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use trafficwave::control::{apply_boundary, backstepping_controls_self_consistent};
use trafficwave::history::InputHistory;
use trafficwave::plant::Plant;
use trafficwave::runner::{self, Policy, SweepParam};
use trafficwave::scenario::{ModeChoice, Scenario};

fn plant_with_histories(scenario: &Scenario) -> (Plant, InputHistory, InputHistory) {
    let r = scenario.resolve().unwrap();
    let mut in_h = InputHistory::new(2.0 * r.sp.length / r.params.u);
    let mut out_h = InputHistory::new(2.0 * r.sp.length / r.params.u);
    let mut plant = Plant::new(r.fd, r.sp, r.params, r.mode, scenario.n_cells, &r.ic).unwrap();
    plant.seed_histories(&r.ic, &mut in_h, &mut out_h, scenario.dt);
    plant.materialize(&in_h, &out_h).unwrap();
    (plant, in_h, out_h)
}

fn bench_backend_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("plant_step");
    for (label, mode) in [
        ("characteristics", ModeChoice::Characteristics),
        ("finite_volume", ModeChoice::FiniteVolume),
    ] {
        let mut scenario = Scenario::default();
        scenario.mode = mode;
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            let r = scenario.resolve().unwrap();
            let (mut plant, mut in_h, mut out_h) = plant_with_histories(&scenario);
            let mut t = 0.0;
            b.iter(|| {
                let input =
                    backstepping_controls_self_consistent(plant.state(), &r.sp, &r.gains, &r.params);
                apply_boundary(&input, &r.sp, &r.fd, 0.02, &mut in_h, &mut out_h);
                plant.materialize(&in_h, &out_h).unwrap();
                plant.step(&in_h, &out_h, scenario.dt).unwrap();
                t += scenario.dt;
            });
        });
    }
    group.finish();
}

fn bench_sweep_parallel_vs_sequential(c: &mut Criterion) {
    let mut scenario = Scenario::default();
    scenario.horizon = 5.0;
    scenario.n_cells = 120;
    let values: Vec<f64> = (1..=8).map(|k| 1.0 / k as f64).collect();

    let mut group = c.benchmark_group("amplitude_sweep_8_runs");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            runner::sweep_sequential(&scenario, SweepParam::AmplitudeScale, &values, Policy::Backstepping)
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("rayon", |b| {
        b.iter(|| runner::sweep(&scenario, SweepParam::AmplitudeScale, &values, Policy::Backstepping))
    });
    group.finish();
}

criterion_group!(benches, bench_backend_steps, bench_sweep_parallel_vs_sequential);
criterion_main!(benches);
