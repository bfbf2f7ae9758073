//! Fixed inputs shared by the benchmarks.

use popmaml::harness::{generate_problem_data, ExperimentConfig, Problem, ProblemData};
use popmaml::nn::{self, Example, MlpParams};

/// A 1 -> `hidden` -> 1 network with its Glorot initialization.
pub fn network(hidden: usize) -> MlpParams {
    nn::init_params(1, hidden, 1, 7).unwrap()
}

/// `n` points of a smooth curve on [-1, 1].
pub fn batch(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (n.max(2) - 1) as f64;
            Example::new(vec![x], vec![(2.5 * x).sin() + 0.3 * x])
        })
        .collect()
}

/// A reduced Problem One corpus: 8 training structures, 20 test structures.
pub fn problem_one() -> (ExperimentConfig, ProblemData) {
    let cfg = ExperimentConfig {
        problem: Problem::Line1Hz,
        n_test_structures: 20,
        hidden_sizes: vec![10],
        master_seed: 3,
        workers: Some(1),
        ..Default::default()
    };
    let data = generate_problem_data(&cfg).unwrap();
    (cfg, data)
}
