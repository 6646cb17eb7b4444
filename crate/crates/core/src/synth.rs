//! Two-dimensional synthetic benchmark with a closed-form decision function.
//!
//! Class +1 is a standard normal at the origin. Class -1 is an equal mixture
//! of standard normals at (2, 2) and (2, -2). Both classes are equally
//! likely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::borders::DecisionOracle;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::BinaryProblem;

const MINUS_CENTRES: [[f64; 2]; 2] = [[2.0, 2.0], [2.0, -2.0]];

fn check_dim(x: &[f64]) -> Result<()> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: x.len(),
        });
    }
    Ok(())
}

/// `ln p(x|+1) - ln p(x|-1)` and the softmax weights of the two minus
/// components. Normalizing constants cancel.
fn log_ratio(x: &[f64]) -> (f64, [f64; 2]) {
    let plus = -0.5 * (x[0] * x[0] + x[1] * x[1]);
    let comp = MINUS_CENTRES.map(|c| -0.5 * ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)));
    let top = comp[0].max(comp[1]);
    let e = comp.map(|l| (l - top).exp());
    let s = e[0] + e[1];
    let minus = 0.5f64.ln() + top + s.ln();
    (plus - minus, [e[0] / s, e[1] / s])
}

/// True `p(+1|x) - p(-1|x)`.
pub fn synth_true_r(x: &[f64]) -> Result<f64> {
    check_dim(x)?;
    Ok((0.5 * log_ratio(x).0).tanh())
}

pub fn synth_true_gradient(x: &[f64]) -> Result<Vec<f64>> {
    check_dim(x)?;
    let (delta, w) = log_ratio(x);
    let r = (0.5 * delta).tanh();
    let scale = 0.5 * (1.0 - r * r);
    Ok((0..2)
        .map(|j| {
            let grad =
                -x[j] + w[0] * (x[j] - MINUS_CENTRES[0][j]) + w[1] * (x[j] - MINUS_CENTRES[1][j]);
            scale * grad
        })
        .collect())
}

/// The exact decision function as a border-training oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueOracle;

impl DecisionOracle for TrueOracle {
    fn value(&self, x: &[f64]) -> Result<f64> {
        synth_true_r(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        synth_true_gradient(x)
    }
}

/// Draws `n` labelled points. Class names are `-1` (id 0) and `1` (id 1).
/// A draw that misses a class is repeated from the same stream.
pub fn synth_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("synthetic sample needs at least two points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut features = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let plus = rng.random_bool(0.5);
            let centre = if plus {
                [0.0, 0.0]
            } else {
                MINUS_CENTRES[usize::from(rng.random_bool(0.5))]
            };
            for c in centre {
                let z: f64 = rng.sample(StandardNormal);
                features.push(c + z);
            }
            labels.push(usize::from(plus));
        }
        if labels.contains(&0) && labels.contains(&1) {
            return Dataset::new(2, features, labels, vec!["-1".into(), "1".into()]);
        }
    }
}

pub fn synth_sample(n: usize, seed: u64) -> Result<BinaryProblem> {
    BinaryProblem::from_dataset(&synth_dataset(n, seed)?, 0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borders::finite_difference_gradient;

    #[test]
    fn origin_value() {
        assert!((synth_true_r(&[0.0, 0.0]).unwrap() - 2f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_axis_has_flat_second_gradient() {
        for x0 in [-1.0, 0.5, 1.0, 3.0] {
            let g = synth_true_gradient(&[x0, 0.0]).unwrap();
            assert!(g[1].abs() < 1e-15, "{g:?}");
        }
    }

    #[test]
    fn gradient_matches_differences() {
        for x in [[0.3, -0.7], [1.0, 0.0], [1.5, 1.2], [-2.0, 3.0]] {
            let a = synth_true_gradient(&x).unwrap();
            let f = finite_difference_gradient(&TrueOracle, &x).unwrap();
            for j in 0..2 {
                assert!(
                    (a[j] - f[j]).abs() <= 1e-6 * (1.0 + a[j].abs()),
                    "{a:?} {f:?}"
                );
            }
        }
    }

    #[test]
    fn far_points_saturate_without_overflow() {
        let r = synth_true_r(&[-40.0, 0.0]).unwrap();
        assert_eq!(r, 1.0);
        let r = synth_true_r(&[40.0, 40.0]).unwrap();
        assert_eq!(r, -1.0);
        assert!(synth_true_gradient(&[60.0, -60.0])
            .unwrap()
            .iter()
            .all(|g| g.is_finite()));
    }

    #[test]
    fn wrong_dimension() {
        assert!(synth_true_r(&[0.0]).is_err());
        assert!(synth_dataset(1, 0).is_err());
    }

    #[test]
    fn sample_is_reproducible_and_two_class() {
        let a = synth_dataset(50, 9).unwrap();
        assert_eq!(a, synth_dataset(50, 9).unwrap());
        let c = a.class_counts();
        assert!(c[0] > 0 && c[1] > 0);
        assert!(synth_sample(2, 3).is_ok());
    }
}
