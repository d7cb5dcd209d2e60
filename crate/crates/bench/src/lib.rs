//! Fixtures shared by the benchmarks.

use dmu_core::{CellKind, LayerSpec, Network, SeededRng, Topology, Vector};

pub fn random_sequence(seed: u64, input_dim: usize, steps: usize) -> Vec<Vector> {
    let mut rng = SeededRng::new(seed);
    (0..steps)
        .map(|_| (0..input_dim).map(|_| rng.normal()).collect())
        .collect()
}

pub fn single_layer(kind: CellKind, input_dim: usize, hidden: usize, delays: usize, classes: usize) -> Network {
    Network::new(
        Topology::single(input_dim, classes, LayerSpec::new(kind, hidden, delays)),
        7,
    )
    .expect("valid topology")
}
