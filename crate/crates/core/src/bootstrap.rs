//! Parametric bootstrap under the rank-`k` null model: null datasets, the
//! bootstrap likelihood-ratio sample, and the pure optimization-error sample.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::{DataMatrix, ModelFamily, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::exec::{collect_ordered, Executor, Sequential};
use crate::likelihood::{average_variance, lr_statistic};
use crate::matrix::Matrix;
use crate::nmf::{multi_start_fit, FitOptions, MultiStartResult};
use crate::seed::{self, stream, ERROR_SAMPLE_STREAM};

/// Fitted null distribution: entries are independent with mean `T₀·W₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullModel {
    pub mean: Matrix,
    /// Gaussian nulls carry the sampling variance.
    pub family: ModelFamily,
}

impl NullModel {
    pub fn new(mean: Matrix, family: ModelFamily) -> Result<Self> {
        for (idx, &v) in mean.as_slice().iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                let c = mean.cols();
                return Err(Error::NegativeEntry {
                    row: idx / c + 1,
                    col: idx % c + 1,
                    value: v,
                });
            }
        }
        if let ModelFamily::Gaussian { variance } = family {
            if !(variance >= VARIANCE_FLOOR) {
                return Err(Error::VarianceBelowFloor(variance));
            }
        }
        Ok(NullModel { mean, family })
    }

    /// Null model from the best of a multi-start fit. The Gaussian variance is
    /// the average of the per-start estimates.
    pub fn from_fit(fit: &MultiStartResult) -> Result<Self> {
        let family = match fit.best.model {
            ModelFamily::Poisson => ModelFamily::Poisson,
            ModelFamily::Gaussian { .. } => ModelFamily::Gaussian {
                variance: average_variance(&fit.all_variances)?,
            },
        };
        NullModel::new(fit.best.mean(), family)
    }
}

/// Draws one dataset from the null model. Gaussian draws are truncated at 0.
pub fn sample_null_dataset(null: &NullModel, seed: u64) -> DataMatrix {
    let mut rng = seed::rng(seed);
    let values = match null.family {
        ModelFamily::Poisson => null.mean.map(|m| draw_poisson(&mut rng, m)),
        ModelFamily::Gaussian { variance } => {
            let sd = libm::sqrt(variance);
            null.mean.map(|m| {
                let z: f64 = Normal::new(m, sd).expect("finite sd").sample(&mut rng);
                z.max(0.0)
            })
        }
    };
    DataMatrix::new(values).expect("null draws are finite and non-negative")
}

pub(crate) fn draw_poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    }
}

/// Bootstrap sample of the likelihood-ratio statistic `λ*`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSample {
    pub values: Vec<f64>,
    pub k: usize,
    /// Replicate seed per bootstrap dataset.
    pub per_sample_seeds: Vec<u64>,
    pub starts: usize,
    /// Per-replicate start log-likelihoods at rank `k`.
    pub logliks_k: Vec<Vec<f64>>,
    /// Per-replicate start log-likelihoods at rank `k + 1`.
    pub logliks_k1: Vec<Vec<f64>>,
}

impl LrSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn replicate_seed(master_seed: u64, replicate: u64) -> u64 {
    seed::derive(&[master_seed, stream::BOOTSTRAP, replicate])
}

fn dataset_seed(replicate_seed: u64) -> u64 {
    seed::derive(&[replicate_seed, stream::DATASET])
}

fn check_alternative_rank(null: &NullModel, k: usize) -> Result<()> {
    let max = null.mean.rows().min(null.mean.cols());
    if k < 1 || k + 1 > max {
        return Err(Error::RankOutOfRange { k: k + 1, max });
    }
    Ok(())
}

/// `B` bootstrap datasets, each fitted at ranks `k` and `k+1` with `m` starts;
/// `λ*` uses the best log-likelihood at each rank.
pub fn boot_lr_sample_bestofm<E: Executor>(
    null: &NullModel,
    k: usize,
    b: usize,
    m: usize,
    master_seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<LrSample> {
    if b < 1 || m < 1 {
        return Err(Error::InvalidConfig("bootstrap size and starts must be positive".into()));
    }
    check_alternative_rank(null, k)?;
    let kind = null.family.kind();
    let replicates = exec.map(b, |rep| {
        let rep_seed = replicate_seed(master_seed, rep as u64);
        let data = sample_null_dataset(null, dataset_seed(rep_seed));
        let run = || -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let at_k = multi_start_fit(&data, k, kind, m, rep_seed, opts, &Sequential)?;
            let at_k1 = multi_start_fit(&data, k + 1, kind, m, rep_seed, opts, &Sequential)?;
            let lr = lr_statistic(at_k.best.loglik, at_k1.best.loglik, k)?;
            Ok((lr.value, at_k.all_logliks, at_k1.all_logliks))
        };
        run().map_err(|e| Error::in_replicate(rep, e))
    });
    let replicates = collect_ordered(replicates)?;
    let mut sample = LrSample {
        values: Vec::with_capacity(b),
        k,
        per_sample_seeds: (0..b).map(|rep| replicate_seed(master_seed, rep as u64)).collect(),
        starts: m,
        logliks_k: Vec::with_capacity(b),
        logliks_k1: Vec::with_capacity(b),
    };
    for (value, lk, lk1) in replicates {
        sample.values.push(value);
        sample.logliks_k.push(lk);
        sample.logliks_k1.push(lk1);
    }
    Ok(sample)
}

/// Single-start variant: one fit per rank per bootstrap dataset. Values carry
/// optimization error and may be negative.
pub fn boot_lr_sample_single<E: Executor>(
    null: &NullModel,
    k: usize,
    b: usize,
    master_seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<LrSample> {
    boot_lr_sample_bestofm(null, k, b, 1, master_seed, opts, exec)
}

/// Pure optimization-error sample `e = −2 (e_i(k) − e_j(k+1))` over all
/// start pairs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorSample {
    /// Row-major over `(i, j)`: index `i·m + j`.
    pub values: Vec<f64>,
    pub m: usize,
    pub logliks_k: Vec<f64>,
    pub logliks_k1: Vec<f64>,
}

impl ErrorSample {
    /// Builds the sample from the start log-likelihoods at the two ranks.
    /// The additive error `λ* − λ₀*` of a single-start statistic for each
    /// recorded pair. A single-start log-likelihood is the maximum minus the
    /// shortfall, so the error is `2(e_i(k) − e_j(k+1))`: the negation of
    /// `values`. This is the sample a deconvolution of `λ*` needs.
    pub fn additive_errors(&self) -> Vec<f64> {
        self.values.iter().map(|v| -v).collect()
    }

    pub fn from_logliks(logliks_k: Vec<f64>, logliks_k1: Vec<f64>) -> Result<Self> {
        if logliks_k.is_empty() || logliks_k.len() != logliks_k1.len() {
            return Err(Error::InvalidConfig(
                "error sample needs the same positive number of starts at both ranks".into(),
            ));
        }
        let shortfall = |l: &[f64]| -> Vec<f64> {
            let best = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            l.iter().map(|v| best - v).collect()
        };
        let e_k = shortfall(&logliks_k);
        let e_k1 = shortfall(&logliks_k1);
        let mut values = Vec::with_capacity(e_k.len() * e_k1.len());
        for ei in &e_k {
            for ej in &e_k1 {
                values.push(-2.0 * (ei - ej));
            }
        }
        Ok(ErrorSample {
            values,
            m: logliks_k.len(),
            logliks_k,
            logliks_k1,
        })
    }
}

/// Draws one extra null dataset (reserved stream) and fits it with `m` starts
/// at ranks `k` and `k+1`; the shortfalls from the best start form the error
/// sample.
pub fn pure_error_sample<E: Executor>(
    null: &NullModel,
    k: usize,
    m: usize,
    seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<ErrorSample> {
    if m < 2 {
        return Err(Error::InvalidConfig("error sample needs at least 2 starts".into()));
    }
    check_alternative_rank(null, k)?;
    let kind = null.family.kind();
    let rep_seed = replicate_seed(seed, ERROR_SAMPLE_STREAM);
    let data = sample_null_dataset(null, dataset_seed(rep_seed));
    let at_k = multi_start_fit(&data, k, kind, m, rep_seed, opts, exec)?;
    let at_k1 = multi_start_fit(&data, k + 1, kind, m, rep_seed, opts, exec)?;
    ErrorSample::from_logliks(at_k.all_logliks, at_k1.all_logliks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use alloc::vec;

    #[test]
    fn zero_mean_poisson_is_all_zero() {
        let null = NullModel::new(Matrix::zeros(5, 4), ModelFamily::Poisson).unwrap();
        let d = sample_null_dataset(&null, 3);
        assert!(d.values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_truncation_at_zero_mean() {
        let null = NullModel::new(Matrix::zeros(100, 100), ModelFamily::Gaussian { variance: 1.0 }).unwrap();
        let d = sample_null_dataset(&null, 17);
        let zeros = d.values().as_slice().iter().filter(|&&v| v == 0.0).count() as f64;
        // Binomial(10⁴, ½): 3.29 sd is the two-sided 1e-3 band.
        let band = 3.29 * libm::sqrt(10_000.0 * 0.25);
        assert!((zeros - 5000.0).abs() <= band, "zeros = {zeros}");
    }

    #[test]
    fn poisson_grand_mean_clt() {
        let lambda = 7.5;
        let null = NullModel::new(Matrix::filled(100, 100, lambda), ModelFamily::Poisson).unwrap();
        let d = sample_null_dataset(&null, 8);
        let mean = d.values().mean();
        assert!((mean - lambda).abs() <= 4.0 * libm::sqrt(lambda / 10_000.0), "mean = {mean}");
        assert!(d.check_counts().is_ok());
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let null = NullModel::new(Matrix::filled(6, 5, 3.0), ModelFamily::Poisson).unwrap();
        assert_eq!(sample_null_dataset(&null, 1), sample_null_dataset(&null, 1));
        assert_ne!(sample_null_dataset(&null, 1), sample_null_dataset(&null, 2));
    }

    #[test]
    fn error_sample_pair_enumeration() {
        let s = ErrorSample::from_logliks(vec![-5.0, -6.0], vec![-3.0, -3.0]).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0, -2.0, -2.0]);
    }

    #[test]
    fn error_sample_identical_starts_are_zero() {
        let s = ErrorSample::from_logliks(vec![-1.5; 4], vec![-0.5; 4]).unwrap();
        assert_eq!(s.values.len(), 16);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn error_sample_extremes() {
        let lk = vec![-10.0, -12.5, -11.0];
        let lk1 = vec![-4.0, -4.25, -7.0];
        let s = ErrorSample::from_logliks(lk.clone(), lk1.clone()).unwrap();
        let max = s.values.iter().copied().fold(f64::MIN, f64::max);
        let min = s.values.iter().copied().fold(f64::MAX, f64::min);
        assert_eq!(max, 2.0 * 3.0);
        assert_eq!(min, -2.0 * 2.5);
        assert!(s.values.contains(&0.0));
        let mean_e = |l: &[f64]| {
            let b = l.iter().copied().fold(f64::MIN, f64::max);
            stats::mean(&l.iter().map(|v| b - v).collect::<Vec<_>>())
        };
        let expected = -2.0 * (mean_e(&lk) - mean_e(&lk1));
        assert!((stats::mean(&s.values) - expected).abs() < 1e-12);
    }

    #[test]
    fn pure_error_sample_needs_two_starts() {
        let null = NullModel::new(Matrix::filled(6, 5, 3.0), ModelFamily::Poisson).unwrap();
        assert!(pure_error_sample(&null, 1, 1, 0, &FitOptions::default(), &Sequential).is_err());
    }
}
