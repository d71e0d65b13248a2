//! Fixtures shared by the kernel benchmarks.

use lbfgs_pi::tasks::{
    make_synthetic_family, make_task_set, synthetic_digits, SyntheticKind, SyntheticOptions,
    TaskSetParams,
};
use lbfgs_pi::{DenseVector, LbfgsHistory, Rng, TaskInstance};

/// A full history of `memory` curvature pairs in dimension `n`, plus a
/// gradient. Pairs come from a random diagonal SPD matrix so large `n` stays cheap.
pub fn history_fixture(n: usize, memory: usize) -> (LbfgsHistory, DenseVector) {
    let mut rng = Rng::new(n as u64);
    let diag: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 10.0)).collect();
    let mut hist = LbfgsHistory::new(memory).expect("memory >= 1");
    for _ in 0..memory {
        let s = rng.randn(n, 1.0).expect("n >= 1");
        let y =
            DenseVector::new(s.iter().zip(&diag).map(|(a, b)| a * b).collect()).expect("finite");
        hist.push_pair(s, y).expect("matching lengths");
    }
    let g = rng.randn(n, 1.0).expect("n >= 1");
    (hist, g)
}

/// Four random vectors `(d, g, s, y)` of length `n`.
pub fn step_inputs(n: usize) -> [DenseVector; 4] {
    let mut rng = Rng::new(7);
    std::array::from_fn(|_| rng.randn(n, 1.0).expect("n >= 1"))
}

pub fn logistic_task(n: usize) -> TaskInstance {
    make_synthetic_family(
        SyntheticKind::Logistic,
        n,
        1,
        11,
        &SyntheticOptions::default(),
    )
    .expect("valid family")
    .remove(0)
}

/// One MLP task on `batch` synthetic 8x8 images with 20 hidden units.
pub fn mlp_task(batch: usize) -> TaskInstance {
    let data = synthetic_digits(batch, 8, 13).expect("valid fixture");
    let params = TaskSetParams {
        batch_size: batch,
        n_batches: 1,
        inits_per_batch: 1,
        hidden: vec![20],
        x0_scale: 0.1,
    };
    make_task_set(&data, &params, 13)
        .expect("enough samples")
        .remove(0)
}
