//! Shared generators for the randomized property suites.

#![allow(dead_code)]

use interaction_kernels::dynamics::{simulate_batch, SystemSpec, TrajectoryBatch, VelocityMode};
use interaction_kernels::integrate::OdeOptions;
use interaction_kernels::kernels::{InitialSampler, Kernel, Tabulated};
use interaction_kernels::rng::Stream;
use proptest::prelude::*;

/// A constant kernel, expressed as a flat two-point table.
pub fn constant_kernel(c: f64) -> Kernel {
    Kernel::Tabulated(Tabulated::new(vec![0.0, 100.0], vec![c, c]).unwrap())
}

/// Type layouts small enough that every property case runs in
/// milliseconds. Sizes are powers of two so the type weights are dyadic.
pub fn type_layout() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        Just(vec![4]),
        Just(vec![2, 2]),
        Just(vec![1, 4]),
        Just(vec![2, 4]),
    ]
}

/// A bounded interaction system: random layout and dimension, one bounded
/// constant kernel per ordered type pair. Constants keep trajectories tame
/// on short horizons whatever the draw.
pub fn small_system() -> impl Strategy<Value = SystemSpec> {
    (1usize..=2, type_layout()).prop_flat_map(|(d, sizes)| {
        let k = sizes.len();
        prop::collection::vec(-0.8f64..0.8, k * k).prop_map(move |consts| {
            let kernels = consts.iter().map(|&c| constant_kernel(c)).collect();
            SystemSpec::new(d, sizes.clone(), kernels).unwrap()
        })
    })
}

/// Uniform initial sampler per type over a modest box.
pub fn samplers_for(spec: &SystemSpec) -> Vec<InitialSampler> {
    spec.type_sizes()
        .iter()
        .map(|_| InitialSampler::UniformInterval { lo: -1.5, hi: 1.5 })
        .collect()
}

/// Simulate a small batch on an equispaced grid over `[0, t_end]`.
pub fn small_batch(
    spec: &SystemSpec,
    m_count: usize,
    l_nodes: usize,
    t_end: f64,
    seed: u64,
    mode: VelocityMode,
) -> TrajectoryBatch {
    let samplers = samplers_for(spec);
    let times = interaction_kernels::dynamics::equispaced_times(0.0, t_end, l_nodes);
    simulate_batch(
        spec,
        &samplers,
        m_count,
        0,
        &times,
        seed,
        Stream::Test,
        mode,
        &OdeOptions::default(),
    )
    .unwrap()
}
