//! Seeded random instances, the distance-banded cost matrix and plan sparsity.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{CostKind, CostModel};

/// Default `beta^2` for the L1 surrogate in the sparsity benchmark.
pub const L1_BETA2: f64 = 1e-3;
/// Default `beta^2` for the L0 surrogate in the sparsity benchmark.
pub const L0_BETA2: f64 = 1e-1;
/// Default relative threshold for counting a route as used.
pub const SPARSITY_TAU: f64 = 1e-6;

/// Raw samples are drawn from `[low, high)` before rescaling.
const SAMPLE_LOW: f64 = 0.1;
const SAMPLE_HIGH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on `[0.1, 1.0)`, then rescaled to the requested mass.
    #[default]
    UniformPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub distribution: Distribution,
    pub total_mass: f64,
}

impl GenSpec {
    /// Square instance whose average supply is 1.
    pub fn square(size: usize, seed: u64) -> Self {
        GenSpec {
            m: size,
            n: size,
            seed,
            distribution: Distribution::UniformPositive,
            total_mass: size as f64,
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(SAMPLE_LOW..SAMPLE_HIGH)).collect()
}

/// Rescales `v` to sum to `total`, then sets the last entry so that the
/// running sum hits `total` up to the last bit.
fn rescale(v: &mut [f64], total: f64) {
    let sum: f64 = v.iter().sum();
    let k = total / sum;
    v.iter_mut().for_each(|x| *x *= k);
    if let Some((last, head)) = v.split_last_mut() {
        let head_sum: f64 = head.iter().sum();
        *last = (total - head_sum).max(0.0);
    }
}

/// Random strictly positive supplies and demands with equal totals.
/// Deterministic in `spec.seed`.
pub fn generate_instance(spec: &GenSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.m == 0 || spec.n == 0 {
        return Err(Error::EmptyInstance {
            m: spec.m,
            n: spec.n,
        });
    }
    if !(spec.total_mass.is_finite() && spec.total_mass > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "total_mass = {} must be > 0",
            spec.total_mass
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut p = match spec.distribution {
        Distribution::UniformPositive => sample(&mut rng, spec.m),
    };
    let mut q = match spec.distribution {
        Distribution::UniformPositive => sample(&mut rng, spec.n),
    };
    rescale(&mut p, spec.total_mass);
    let supply: f64 = p.iter().sum();
    rescale(&mut q, supply);
    Ok((p, q))
}

/// `c_ij = |i - j| + 1`.
pub fn distance_costs(m: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |(i, j)| (i.abs_diff(j) + 1) as f64)
}

/// Cost model over [`distance_costs`]. `beta2` defaults to [`L1_BETA2`] or
/// [`L0_BETA2`] for the surrogate models and is ignored for `Sqt`.
pub fn distance_cost_model(m: usize, n: usize, kind: CostKind, beta2: Option<f64>) -> Result<CostModel> {
    let c = distance_costs(m, n);
    match kind {
        CostKind::Sqt => CostModel::sqt(c),
        CostKind::L1Approx => CostModel::l1(c, beta2.unwrap_or(L1_BETA2)),
        CostKind::L0Approx => CostModel::l0(c, beta2.unwrap_or(L0_BETA2)),
        CostKind::QtAffine => Err(Error::InvalidParameter(
            "the distance benchmark has no affine variant".into(),
        )),
    }
}

/// Number of routes carrying more than `tau_rel * max(x)`.
pub fn sparsity(x: &Array2<f64>, tau_rel: f64) -> usize {
    let max = x.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let threshold = tau_rel * max;
    x.iter().filter(|&&v| v > threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_problem;
    use ndarray::array;

    #[test]
    fn balanced_and_deterministic() {
        for seed in 0..20 {
            let spec = GenSpec {
                m: 7,
                n: 11,
                seed,
                distribution: Distribution::UniformPositive,
                total_mass: 3.5,
            };
            let (p, q) = generate_instance(&spec).unwrap();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            assert!((sp - sq).abs() <= 1e-12 * 3.5);
            assert!((sp - 3.5).abs() <= 1e-12 * 3.5);
            assert!(p.iter().chain(&q).all(|&v| v > 0.0));
            assert_eq!(generate_instance(&spec).unwrap(), (p.clone(), q.clone()));
            let model = CostModel::sqt(distance_costs(7, 11)).unwrap();
            assert!(validate_problem(p, q, model).is_ok());
        }
    }

    #[test]
    fn single_supplier_gets_everything() {
        let spec = GenSpec {
            m: 1,
            n: 4,
            seed: 9,
            distribution: Distribution::UniformPositive,
            total_mass: 2.0,
        };
        let (p, _) = generate_instance(&spec).unwrap();
        assert_eq!(p, vec![2.0]);
    }

    #[test]
    fn seeds_differ() {
        let a = generate_instance(&GenSpec::square(8, 1)).unwrap();
        let b = generate_instance(&GenSpec::square(8, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn distance_matrix() {
        assert_eq!(
            distance_costs(3, 3),
            array![[1.0, 2.0, 3.0], [2.0, 1.0, 2.0], [3.0, 2.0, 1.0]]
        );
        let c = distance_costs(9, 9);
        assert_eq!(c, c.t());
        assert!(c.diag().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn default_widths() {
        let l1 = distance_cost_model(2, 2, CostKind::L1Approx, None).unwrap();
        assert_eq!(l1.beta2(), Some(1e-3));
        let l0 = distance_cost_model(2, 2, CostKind::L0Approx, None).unwrap();
        assert_eq!(l0.beta2(), Some(1e-1));
        assert!(distance_cost_model(2, 2, CostKind::QtAffine, None).is_err());
    }

    #[test]
    fn sparsity_counts() {
        assert_eq!(sparsity(&array![[1.0, 0.0], [0.0, 1.0]], 1e-6), 2);
        assert_eq!(sparsity(&Array2::from_elem((2, 2), 0.5), 1e-6), 4);
        assert_eq!(sparsity(&Array2::zeros((2, 2)), 1e-6), 0);
    }
}
