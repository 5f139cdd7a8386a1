//! Sequential rank selection: the bootstrap test, the deconvolved bootstrap
//! test, and the masked-imputation cross-validation baseline.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;

use crate::bootstrap::{
    boot_lr_sample_bestofm, boot_lr_sample_single, pure_error_sample, ErrorSample, LrSample, NullModel,
};
use crate::data::{validate, DataMatrix, Method, ModelKind, SelectionConfig};
use crate::decon::{deconvolve, pvalue_decon, pvalue_empirical, DeconDensity};
use crate::error::{Error, Result};
use crate::exec::{collect_ordered, Executor};
use crate::likelihood::lr_statistic;
use crate::nmf::{fit_nmf_masked, multi_start_fit, Mask, MultiStartResult};
use crate::seed::{self, stream};
use crate::stats::{self, Summary};

/// Masks are redrawn at most this many times to cover every row and column.
pub const MASK_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Decision {
    Reject,
    Accept,
}

/// Summary of the additive errors that were deconvolved out of `λ*`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorSummary {
    pub mean: f64,
    pub sd: f64,
    pub size: usize,
}

/// One test of `H0: rank = k` against `rank ≥ k + 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankStep {
    pub k: usize,
    pub lambda_obs: f64,
    /// Best observed log-likelihood at rank `k`.
    pub loglik_k: f64,
    /// Best observed log-likelihood at rank `k + 1`.
    pub loglik_k1: f64,
    pub pvalue: f64,
    pub decision: Decision,
    pub lr_sample_summary: Summary,
    pub error_sample_summary: Option<ErrorSummary>,
    /// Sampling variance of a Gaussian null (averaged over the starts).
    pub null_variance: Option<f64>,
    pub decon_penalty: Option<f64>,
    pub decon_converged: Option<bool>,
    /// Filled in by callers that time the steps; never part of a report.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub wallclock_secs: Option<f64>,
}

/// Raw samples behind a step, kept for density export.
#[derive(Debug, Clone, PartialEq)]
pub struct StepArtifacts {
    pub k: usize,
    pub lr_sample: LrSample,
    pub error_sample: Option<ErrorSample>,
    pub density: Option<DeconDensity>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImputeOutcome {
    pub k_grid: Vec<usize>,
    /// Held-out loss averaged over repeats, aligned with `k_grid`.
    pub mean_losses: Vec<f64>,
    /// `losses[r][g]` for repeat `r` and rank `k_grid[g]`.
    pub losses: Vec<Vec<f64>>,
    pub masked_per_repeat: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankReport {
    pub method: Method,
    pub selected_rank: usize,
    /// Every tested rank up to `k_max` was rejected.
    pub capped: bool,
    pub steps: Vec<RankStep>,
    pub config: SelectionConfig,
    pub seed_trace: Vec<u64>,
    pub impute: Option<ImputeOutcome>,
    pub warnings: Vec<String>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub artifacts: Vec<StepArtifacts>,
}

/// Execution context for the selectors.
pub struct Runtime<'a, E: Executor> {
    pub exec: &'a E,
    /// Called on the driving thread after each completed step.
    pub observer: Option<&'a dyn Fn(&RankStep)>,
    /// Keep raw bootstrap/error samples and densities in the report.
    pub keep_artifacts: bool,
}

impl<'a, E: Executor> Runtime<'a, E> {
    pub fn new(exec: &'a E) -> Self {
        Runtime {
            exec,
            observer: None,
            keep_artifacts: false,
        }
    }
}

/// Dispatches on `config.method`.
pub fn select_rank<E: Executor>(x: &DataMatrix, config: &SelectionConfig, rt: &Runtime<'_, E>) -> Result<RankReport> {
    match config.method {
        Method::Boot => select_rank_boot(x, config, rt),
        Method::DeconBoot => select_rank_decon(x, config, rt),
        Method::ImputeCv => select_rank_impute(x, config, rt),
    }
}

/// Bootstrap test with `m` starts on the data and on every bootstrap dataset.
pub fn select_rank_boot<E: Executor>(x: &DataMatrix, config: &SelectionConfig, rt: &Runtime<'_, E>) -> Result<RankReport> {
    let mut cfg = config.clone();
    cfg.method = Method::Boot;
    sequential_test(x, &cfg, rt)
}

/// Deconvolved bootstrap test: single-start bootstrap statistics plus a pure
/// error sample from one extra bootstrap dataset.
pub fn select_rank_decon<E: Executor>(x: &DataMatrix, config: &SelectionConfig, rt: &Runtime<'_, E>) -> Result<RankReport> {
    let mut cfg = config.clone();
    cfg.method = Method::DeconBoot;
    sequential_test(x, &cfg, rt)
}

fn observed_master(cfg: &SelectionConfig) -> u64 {
    seed::derive(&[cfg.seed, stream::OBSERVED_FITS])
}

fn bootstrap_master(cfg: &SelectionConfig, k: usize) -> u64 {
    seed::derive(&[cfg.seed, stream::BOOTSTRAP, k as u64])
}

fn sequential_test<E: Executor>(x: &DataMatrix, config: &SelectionConfig, rt: &Runtime<'_, E>) -> Result<RankReport> {
    let cfg = validate(config, x)?;
    if cfg.model == ModelKind::Poisson {
        x.check_counts()?;
    }
    let k_max = cfg.cap();
    let fit_master = observed_master(&cfg);
    let fit = |k: usize| multi_start_fit(x, k, cfg.model, cfg.starts, fit_master, &cfg.fit, rt.exec);

    let mut report = RankReport {
        method: cfg.method,
        selected_rank: cfg.k_start,
        capped: false,
        steps: Vec::new(),
        config: cfg.clone(),
        seed_trace: vec![fit_master],
        impute: None,
        warnings: Vec::new(),
        artifacts: Vec::new(),
    };

    let mut at_k: MultiStartResult = fit(cfg.k_start)?;
    let mut k = cfg.k_start;
    loop {
        let at_k1 = fit(k + 1)?;
        let lr = lr_statistic(at_k.best.loglik, at_k1.best.loglik, k)?;
        let null = NullModel::from_fit(&at_k)?;
        let boot_master = bootstrap_master(&cfg, k);
        report.seed_trace.push(boot_master);

        let (pvalue, lr_sample, error_sample, density) = match cfg.method {
            Method::Boot => {
                let sample = boot_lr_sample_bestofm(&null, k, cfg.bootstrap, cfg.starts, boot_master, &cfg.fit, rt.exec)?;
                (pvalue_empirical(&sample.values, lr.value), sample, None, None)
            }
            Method::DeconBoot => {
                let sample = boot_lr_sample_single(&null, k, cfg.bootstrap, boot_master, &cfg.fit, rt.exec)?;
                let errors = pure_error_sample(&null, k, cfg.starts, boot_master, &cfg.fit, rt.exec)?;
                let density = deconvolve(&sample.values, &errors.additive_errors(), &cfg.decon)?;
                if !density.converged {
                    report.warnings.push(format!(
                        "k={k}: deconvolution stopped at the iteration limit ({})",
                        density.iterations
                    ));
                }
                (pvalue_decon(&density, lr.value), sample, Some(errors), Some(density))
            }
            Method::ImputeCv => unreachable!("imputation is not a sequential test"),
        };

        let decision = if pvalue < cfg.alpha {
            Decision::Reject
        } else {
            Decision::Accept
        };
        let step = RankStep {
            k,
            lambda_obs: lr.value,
            loglik_k: lr.loglik_k,
            loglik_k1: lr.loglik_k1,
            pvalue,
            decision,
            lr_sample_summary: Summary::of(&lr_sample.values),
            error_sample_summary: error_sample.as_ref().map(|e| {
                let errors = e.additive_errors();
                ErrorSummary {
                    mean: stats::mean(&errors),
                    sd: stats::sd(&errors),
                    size: errors.len(),
                }
            }),
            null_variance: null.family.variance(),
            decon_penalty: density.as_ref().map(|d| d.penalty),
            decon_converged: density.as_ref().map(|d| d.converged),
            wallclock_secs: None,
        };
        if let Some(observer) = rt.observer {
            observer(&step);
        }
        report.steps.push(step);
        if rt.keep_artifacts {
            report.artifacts.push(StepArtifacts {
                k,
                lr_sample,
                error_sample,
                density,
            });
        }

        match decision {
            Decision::Accept => {
                report.selected_rank = k;
                break;
            }
            Decision::Reject if k >= k_max => {
                report.selected_rank = k_max;
                report.capped = true;
                break;
            }
            Decision::Reject => {
                at_k = at_k1;
                k += 1;
            }
        }
    }
    Ok(report)
}

/// Draws a mask hiding `round(fraction · p · n)` entries, redrawing until
/// every row and column keeps an observed entry.
pub fn draw_mask(p: usize, n: usize, fraction: f64, seed_value: u64) -> Result<Mask> {
    let total = p * n;
    let hidden = libm::round(fraction * total as f64) as usize;
    for attempt in 0..MASK_ATTEMPTS {
        let mut rng = seed::rng(seed::derive(&[seed_value, attempt as u64]));
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        let mut observed = vec![true; total];
        for &idx in &order[..hidden.min(total)] {
            observed[idx] = false;
        }
        let mask = Mask::from_fn(p, n, |i, j| observed[i * n + j]);
        if mask.check_coverage().is_ok() {
            return Ok(mask);
        }
    }
    Err(Error::MaskRedrawExhausted)
}

/// Held-out loss on the hidden entries: summed generalized KL divergence for
/// Poisson data, mean squared error for Gaussian data.
pub fn held_out_loss(x: &DataMatrix, mask: &Mask, fitted: &crate::matrix::Matrix, model: ModelKind) -> f64 {
    let values = x.values();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..x.p() {
        for j in 0..x.n() {
            if mask.is_observed(i, j) {
                continue;
            }
            let (xv, m) = (values[(i, j)], fitted[(i, j)]);
            count += 1;
            total += match model {
                ModelKind::Poisson => {
                    let mut d = m - xv;
                    if xv > 0.0 {
                        d += xv * libm::log(xv / m);
                    }
                    d
                }
                ModelKind::Gaussian => (xv - m) * (xv - m),
            };
        }
    }
    match model {
        ModelKind::Poisson => total,
        ModelKind::Gaussian => total / count.max(1) as f64,
    }
}

/// Imputation cross-validation: hide a random fraction of entries, fit each
/// candidate rank on the rest and keep the rank with the smallest average
/// held-out loss (ties go to the smaller rank).
pub fn select_rank_impute<E: Executor>(x: &DataMatrix, config: &SelectionConfig, rt: &Runtime<'_, E>) -> Result<RankReport> {
    let mut cfg = config.clone();
    cfg.method = Method::ImputeCv;
    let cfg = validate(&cfg, x)?;
    let settings = &cfg.impute;
    let mut k_grid: Vec<usize> = settings.k_grid.clone().unwrap_or_else(|| (1..=cfg.cap()).collect());
    k_grid.sort_unstable();
    k_grid.dedup();

    let repeats = settings.repeats;
    let mask_seeds: Vec<u64> = (0..repeats)
        .map(|r| seed::derive(&[cfg.seed, stream::MASK, r as u64]))
        .collect();
    let masks = mask_seeds
        .iter()
        .map(|&s| draw_mask(x.p(), x.n(), settings.mask_fraction, s))
        .collect::<Result<Vec<_>>>()?;
    let masked_per_repeat = masks.first().map_or(0, |m| x.p() * x.n() - m.count_observed());

    let cells = repeats * k_grid.len();
    let losses = rt.exec.map(cells, |idx| {
        let (r, g) = (idx / k_grid.len(), idx % k_grid.len());
        let k = k_grid[g];
        let fit_seed = seed::derive(&[cfg.seed, stream::MASKED_FIT, r as u64, k as u64]);
        let fit = fit_nmf_masked(x, &masks[r], k, cfg.model, fit_seed, &cfg.fit)?;
        Ok(held_out_loss(x, &masks[r], &fit.mean(), cfg.model))
    });
    let flat = collect_ordered::<f64, Error>(losses)?;
    let losses: Vec<Vec<f64>> = flat.chunks(k_grid.len()).map(|c| c.to_vec()).collect();
    let mean_losses: Vec<f64> = (0..k_grid.len())
        .map(|g| losses.iter().map(|row| row[g]).sum::<f64>() / repeats as f64)
        .collect();
    let mut best = 0;
    for (g, &l) in mean_losses.iter().enumerate() {
        if l < mean_losses[best] {
            best = g;
        }
    }

    let mut seed_trace = mask_seeds;
    seed_trace.insert(0, cfg.seed);
    Ok(RankReport {
        method: Method::ImputeCv,
        selected_rank: k_grid[best],
        capped: false,
        steps: Vec::new(),
        config: cfg.clone(),
        seed_trace,
        impute: Some(ImputeOutcome {
            k_grid,
            mean_losses,
            losses,
            masked_per_repeat,
        }),
        warnings: Vec::new(),
        artifacts: Vec::new(),
    })
}
