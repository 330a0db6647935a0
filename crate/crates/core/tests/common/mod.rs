#![allow(dead_code)]

use hqtp_core::genbench::{generate_instance, Distribution, GenSpec};
use hqtp_core::{validate_problem, CostKind, CostModel, Problem};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shapes with `(m-1)(n-1) <= 2`.
pub const SMALL_SHAPES: [(usize, usize); 6] = [(1, 1), (1, 4), (3, 1), (2, 2), (2, 3), (3, 2)];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| rng.random_range(lo..hi))
}

/// Marginals with mean supply 1.
pub fn marginals(m: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    generate_instance(&GenSpec {
        m,
        n,
        seed,
        distribution: Distribution::UniformPositive,
        total_mass: m as f64,
    })
    .unwrap()
}

/// Random instance of the given kind: costs in `[0.5, 2)`, affine linear
/// terms in `[0, 1)`.
pub fn random_problem(kind: CostKind, m: usize, n: usize, seed: u64, beta2: f64) -> Problem {
    let mut rng = rng(seed ^ 0x5eed_0000);
    let c = random_matrix(&mut rng, m, n, 0.5, 2.0);
    let cost = match kind {
        CostKind::QtAffine => {
            let b = random_matrix(&mut rng, m, n, 0.0, 1.0);
            CostModel::qt_affine(c, b).unwrap()
        }
        kind => CostModel::new(kind, c, None, Some(beta2)).unwrap(),
    };
    let (p, q) = marginals(m, n, seed);
    validate_problem(p, q, cost).unwrap()
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}
