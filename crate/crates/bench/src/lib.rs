//! Shared fixtures for the benchmarks.

use lossnet::{ModelParams, Occupancy, StateSpace};

pub fn two_class() -> (ModelParams, StateSpace) {
    let p = ModelParams::two_class_example(0.01);
    let ss = StateSpace::build(&p).unwrap();
    (p, ss)
}

pub fn toy() -> (ModelParams, StateSpace) {
    let p = ModelParams::toy();
    let ss = StateSpace::build(&p).unwrap();
    (p, ss)
}

/// Deterministic interior occupancy with uneven weights.
pub fn interior(len: usize) -> Occupancy {
    Occupancy::from_weights((0..len).map(|i| 1.0 + ((i * 7) % 5) as f64).collect()).unwrap()
}
