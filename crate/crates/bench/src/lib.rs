//! Shared fixtures for the benchmarks.

use pnode_core::dataset::{generate_dataset_with, trajectory_rng, Dataset};
use pnode_core::model::{Architecture, MlpDynamics};
use pnode_core::projection::{project_robust, ConstraintSpec, ProjectionConfig};
use pnode_core::systems::{DynamicalSystem, SystemKind, SystemParams};
use pnode_core::Vector;
use rand::Rng;

pub fn system(kind: SystemKind) -> DynamicalSystem {
    DynamicalSystem::new(kind, SystemParams::default()).expect("default parameters are valid")
}

/// A feasible state moved `offset` off the manifold in each coordinate,
/// with the constraint it should be projected back onto.
pub fn perturbed_state(kind: SystemKind, offset: f64) -> (Vector, ConstraintSpec) {
    let sys = system(kind);
    let mut rng = trajectory_rng(42, kind as u64);
    let u0 = sys.sample_ic(&mut rng);
    let c = sys
        .constraint(&u0, 0.0)
        .expect("sampled state has a constraint");
    let base = project_robust(&u0, &c, 0.0, &ProjectionConfig::robust())
        .expect("sampled state projects")
        .z;
    let u = base
        .iter()
        .map(|x| x + offset * rng.gen_range(-1.0..1.0))
        .collect();
    (u, c)
}

/// One training trajectory with `samples` saved states and a freshly
/// initialized model for it.
pub fn training_fixture(
    kind: SystemKind,
    samples: usize,
    hidden: &[usize],
) -> (Dataset, Vec<ConstraintSpec>, MlpDynamics) {
    let sys = system(kind);
    let data = generate_dataset_with(&sys, 1, 7, 0.1 * (samples - 1) as f64, 1e-3, 100)
        .expect("reference data generates");
    let constraints = data.constraints(&sys).expect("constraints build");
    let arch = Architecture::for_system(&sys, hidden).expect("architecture fits the system");
    (data, constraints, MlpDynamics::init(arch, 3))
}
