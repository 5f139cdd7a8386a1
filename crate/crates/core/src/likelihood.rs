//! Log-likelihoods, the Gaussian variance estimate and the likelihood-ratio
//! statistic.

use crate::data::{check_counts, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Poisson means are floored at this value inside the logarithm.
pub const POISSON_MEAN_FLOOR: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `Σ_ij [x ln m − m − ln x!]`, with `0·ln 0 = 0`.
///
/// `x` must hold integer counts (within the integrality tolerance).
pub fn poisson_loglik(x: &Matrix, mean: &Matrix) -> Result<f64> {
    mean.ensure_shape(x.rows(), x.cols())?;
    check_counts(x)?;
    let mut total = 0.0;
    for (&xv, &m) in x.as_slice().iter().zip(mean.as_slice()) {
        let xv = libm::round(xv);
        total -= m;
        if xv > 0.0 {
            total += xv * libm::log(m.max(POISSON_MEAN_FLOOR)) - libm::lgamma(xv + 1.0);
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFiniteLoglik)
    }
}

/// `Σ_ij [−½ ln(2πσ²) − (x − m)² / (2σ²)]`.
pub fn gaussian_loglik(x: &Matrix, mean: &Matrix, variance: f64) -> Result<f64> {
    mean.ensure_shape(x.rows(), x.cols())?;
    if !(variance >= VARIANCE_FLOOR) {
        return Err(Error::VarianceBelowFloor(variance));
    }
    let rss = residual_sum_of_squares(x, mean);
    let count = x.as_slice().len() as f64;
    let total = -0.5 * count * (LN_2PI + libm::log(variance)) - rss / (2.0 * variance);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFiniteLoglik)
    }
}

pub(crate) fn residual_sum_of_squares(x: &Matrix, mean: &Matrix) -> f64 {
    x.as_slice()
        .iter()
        .zip(mean.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Mean squared residual of `X − T·W`, floored at [`VARIANCE_FLOOR`].
pub fn estimate_variance(x: &Matrix, t: &Matrix, w: &Matrix) -> Result<f64> {
    let mean = t.matmul(w)?;
    mean.ensure_shape(x.rows(), x.cols())?;
    Ok(variance_from_mean(x, &mean))
}

pub(crate) fn variance_from_mean(x: &Matrix, mean: &Matrix) -> f64 {
    let count = x.as_slice().len() as f64;
    (residual_sum_of_squares(x, mean) / count).max(VARIANCE_FLOOR)
}

/// Arithmetic mean of per-run variance estimates, floored.
pub fn average_variance(per_run: &[f64]) -> Result<f64> {
    if per_run.is_empty() {
        return Err(Error::EmptyVarianceList);
    }
    let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
    Ok(mean.max(VARIANCE_FLOOR))
}

/// Likelihood-ratio statistic for rank `k` against rank `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrStatistic {
    pub value: f64,
    pub k: usize,
    pub loglik_k: f64,
    pub loglik_k1: f64,
}

/// `λ = −2 (l(k) − l(k+1))`. Negative values are legal: they signal that at
/// least one of the two optima is not global.
pub fn lr_statistic(loglik_k: f64, loglik_k1: f64, k: usize) -> Result<LrStatistic> {
    if !loglik_k.is_finite() || !loglik_k1.is_finite() {
        return Err(Error::NonFiniteLoglik);
    }
    Ok(LrStatistic {
        value: -2.0 * (loglik_k - loglik_k1),
        k,
        loglik_k,
        loglik_k1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;

    fn ln_factorial(x: u64) -> f64 {
        (1..=x).map(|i| libm::log(i as f64)).sum()
    }

    #[test]
    fn poisson_scalar_cases() {
        let one = Matrix::from_rows(&[[1.0]]);
        assert_relative_eq!(poisson_loglik(&one, &one).unwrap(), -1.0);
        let zero = Matrix::from_rows(&[[0.0]]);
        let two = Matrix::from_rows(&[[2.0]]);
        assert_relative_eq!(poisson_loglik(&zero, &two).unwrap(), -2.0);
    }

    #[test]
    fn poisson_saturated_matches_direct_sum() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [2.0, 2.0]]);
        let direct: f64 = [3u64, 1, 2, 2]
            .iter()
            .map(|&c| {
                let c_f = c as f64;
                c_f * libm::log(c_f) - c_f - ln_factorial(c)
            })
            .sum();
        assert_relative_eq!(poisson_loglik(&x, &x).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn poisson_rejects_fractional_counts_and_shapes() {
        let x = Matrix::from_rows(&[[0.5]]);
        assert!(matches!(
            poisson_loglik(&x, &x),
            Err(Error::NonIntegerCount { .. })
        ));
        let y = Matrix::zeros(1, 2);
        assert!(matches!(
            poisson_loglik(&Matrix::zeros(1, 1), &y),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn poisson_zero_mean_is_floored() {
        let x = Matrix::from_rows(&[[2.0]]);
        let m = Matrix::from_rows(&[[0.0]]);
        let expected = 2.0 * libm::log(POISSON_MEAN_FLOOR) - libm::log(2.0);
        assert_relative_eq!(poisson_loglik(&x, &m).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_closed_forms() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_relative_eq!(
            gaussian_loglik(&x, &x, 1.0).unwrap(),
            -2.0 * LN_2PI,
            epsilon = 1e-12
        );
        let x2 = Matrix::from_rows(&[[2.0, 3.0]]);
        let m2 = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_relative_eq!(
            gaussian_loglik(&x2, &m2, 1.0).unwrap(),
            -LN_2PI - 1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            gaussian_loglik(&x2, &m2, 1e-13),
            Err(Error::VarianceBelowFloor(_))
        ));
    }

    #[test]
    fn gaussian_random_matches_per_entry_sum() {
        let x = Matrix::from_rows(&[[0.3, 1.7, 2.2], [0.0, 4.1, 0.9], [5.5, 0.2, 1.0]]);
        let m = Matrix::from_rows(&[[0.5, 1.5, 2.0], [0.4, 3.9, 1.1], [5.0, 0.0, 1.3]]);
        let var = 0.7;
        let direct: f64 = x
            .as_slice()
            .iter()
            .zip(m.as_slice())
            .map(|(a, b)| {
                -0.5 * libm::log(2.0 * core::f64::consts::PI * var) - (a - b) * (a - b) / (2.0 * var)
            })
            .sum();
        assert_relative_eq!(gaussian_loglik(&x, &m, var).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn variance_estimates() {
        let t = Matrix::from_rows(&[[1.0], [2.0]]);
        let w = Matrix::from_rows(&[[1.0, 3.0]]);
        let exact = t.matmul(&w).unwrap();
        assert_eq!(estimate_variance(&exact, &t, &w).unwrap(), VARIANCE_FLOOR);
        let shifted = exact.map(|v| v + 2.0);
        assert_relative_eq!(estimate_variance(&shifted, &t, &w).unwrap(), 4.0);

        let x = Matrix::from_rows(&[
            [0.1, 2.0, 3.3, 0.0, 1.2],
            [1.1, 0.5, 0.7, 2.2, 0.0],
            [3.0, 1.0, 0.4, 0.9, 1.8],
            [0.6, 0.6, 2.5, 1.1, 0.3],
        ]);
        let t = Matrix::from_rows(&[[0.5, 0.1], [0.2, 0.7], [0.9, 0.3], [0.4, 0.4]]);
        let w = Matrix::from_rows(&[[1.0, 0.5, 2.0, 0.3, 1.1], [0.2, 1.4, 0.6, 1.9, 0.0]]);
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                let fit: f64 = (0..2).map(|a| t[(i, a)] * w[(a, j)]).sum();
                direct += (x[(i, j)] - fit) * (x[(i, j)] - fit);
            }
        }
        assert_relative_eq!(
            estimate_variance(&x, &t, &w).unwrap(),
            direct / 20.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn average_variance_cases() {
        assert_eq!(average_variance(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(average_variance(&[0.25]).unwrap(), 0.25);
        assert_eq!(average_variance(&[]), Err(Error::EmptyVarianceList));
        let values: Vec<f64> = (0..50).map(|i| 0.1 + (i as f64 * 0.37) % 2.0).collect();
        let mut oracle = 0.0;
        for v in &values {
            oracle += v;
        }
        oracle /= 50.0;
        assert_relative_eq!(average_variance(&values).unwrap(), oracle, epsilon = 1e-14);
    }

    #[test]
    fn lr_statistic_arithmetic() {
        assert_eq!(lr_statistic(-4.0, -4.0, 1).unwrap().value, 0.0);
        assert_eq!(lr_statistic(-10.0, -7.0, 2).unwrap().value, 6.0);
        assert!(lr_statistic(f64::NAN, 1.0, 1).is_err());
        assert!(lr_statistic(0.0, f64::NEG_INFINITY, 1).is_err());
    }

    #[test]
    fn gaussian_profile_maximum_at_mean_squared_residual() {
        let x = Matrix::from_rows(&[[1.0, 2.5, 0.0], [3.2, 0.4, 1.9]]);
        let m = Matrix::from_rows(&[[1.3, 2.0, 0.2], [2.9, 1.0, 1.5]]);
        let best = variance_from_mean(&x, &m);
        let at_best = gaussian_loglik(&x, &m, best).unwrap();
        for step in 1..400 {
            let v = step as f64 * 0.005;
            assert!(gaussian_loglik(&x, &m, v).unwrap() <= at_best + 1e-12);
        }
    }
}
