//! Fixtures shared by the benchmarks.

use nslqr::harness::{build_controller, ControllerKind, ControllerSection};
use nslqr::instances::{build_drift_instance, build_switching_instance, DriftMode};
use nslqr::{Controller, CostSpec, DynamicsSeq, Theta};

/// A fixed stabilizable `n x d` system drawn by the switching generator.
pub fn system(n: usize, d: usize) -> (Theta, CostSpec) {
    let seq = build_switching_instance(n, d, 1, 1, 0.0, 11).expect("fixture system");
    (seq.segments()[0].theta.clone(), seq.cost().clone())
}

pub fn switching(n: usize, d: usize, horizon: usize) -> DynamicsSeq {
    build_switching_instance(n, d, horizon, 4, 0.4, 3).expect("fixture instance")
}

pub fn drift(n: usize, d: usize, horizon: usize) -> DynamicsSeq {
    build_drift_instance(n, d, horizon, 1.0, DriftMode::SmoothSine, 3).expect("fixture instance")
}

pub fn controller(name: &str, seq: &DynamicsSeq) -> Box<dyn Controller + Send> {
    let kind: ControllerKind = name.parse().expect("controller name");
    build_controller(kind, &ControllerSection::default(), seq, 1, 0).expect("fixture controller")
}
