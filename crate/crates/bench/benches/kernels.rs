use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pnode_bench::{perturbed_state, system, training_fixture};
use pnode_core::odeint::{constrained_step, StepMode};
use pnode_core::projection::{project_fast, project_robust, ProjectionConfig};
use pnode_core::systems::SystemKind;
use pnode_core::training::{full_windows, window_loss, window_loss_grad, LossSpec, TrainingMode};

const KINDS: [SystemKind; 3] = [
    SystemKind::MassSpring,
    SystemKind::NonlinearSpring2d,
    SystemKind::RobotArm,
];

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("projection");
    for kind in KINDS {
        let (u, spec) = perturbed_state(kind, 1e-3);
        let fast = ProjectionConfig::fast().with_fallback(false);
        let robust = ProjectionConfig::robust();
        group.bench_with_input(BenchmarkId::new("fast", kind), &u, |b, u| {
            b.iter(|| project_fast(black_box(u), &spec, 0.0, &fast).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("robust", kind), &u, |b, u| {
            b.iter(|| project_robust(black_box(u), &spec, 0.0, &robust).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    let sys = system(SystemKind::NonlinearSpring2d);
    let (u, spec) = perturbed_state(SystemKind::NonlinearSpring2d, 0.0);
    let f = |x: &[f64], t: f64| sys.true_rhs(x, t);
    let modes = [
        ("rk4", StepMode::None),
        ("stabilized", StepMode::Stabilized { gamma: 0.5 }),
        (
            "projected_fast",
            StepMode::Projected(ProjectionConfig::fast()),
        ),
        (
            "projected_robust",
            StepMode::Projected(ProjectionConfig::robust()),
        ),
    ];
    for (name, mode) in modes {
        group.bench_function(name, |b| {
            b.iter(|| constrained_step(&f, black_box(&u), 0.0, 0.01, &mode, Some(&spec)).unwrap())
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("window_loss");
    group.sample_size(20);
    let (data, constraints, model) = training_fixture(SystemKind::MassSpring, 11, &[32, 32]);
    let window = full_windows(&data)[0].view(&data, &constraints);
    for mode in [TrainingMode::Node, TrainingMode::PnodeFast] {
        let spec = LossSpec::new(mode, 0.01);
        group.bench_function(BenchmarkId::new("value", mode), |b| {
            b.iter(|| window_loss(&model, &window, &spec).unwrap())
        });
        group.bench_function(BenchmarkId::new("gradient", mode), |b| {
            b.iter(|| window_loss_grad(&model, &window, &spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projection, step, loss);
criterion_main!(benches);
