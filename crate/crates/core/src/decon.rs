//! Penalized maximum-likelihood deconvolution.
//!
//! The contaminated values are modelled as `λ* = λ₀ + e`, where the density of
//! `λ₀` is a Gaussian-kernel mixture on a fixed grid,
//! `f(x) = Σ_g w_g φ_h(x − x_g)`, and the error distribution is the empirical
//! distribution of a pure-error sample. The weights maximize
//!
//! ```text
//! Σ_i ln[(1/|E|) Σ_j f(λ*_i − e_j)] − τ Σ_g (Δ² w)_g²
//! ```
//!
//! over the probability simplex, where `Δ²` is the second difference along
//! the grid. The optimizer is an EM-style multiplicative step whose proposal
//! is accepted through a backtracking line search, so the objective never
//! decreases.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::{normal_pdf, normal_sf};

/// Candidate penalties scored by cross-validation.
pub const PENALTY_CANDIDATES: [f64; 5] = [1e-2, 1e-1, 1.0, 10.0, 100.0];
const CV_FOLDS: usize = 5;
/// Kernel contributions beyond this many bandwidths are dropped.
const KERNEL_REACH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "rule", content = "value", rename_all = "snake_case"))]
pub enum PenaltyChoice {
    Fixed(f64),
    /// 5-fold cross-validation over [`PENALTY_CANDIDATES`] on the held-out
    /// contaminated log-likelihood.
    CrossValidated,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeconOptions {
    pub grid_points: usize,
    pub penalty: PenaltyChoice,
    /// Kernel bandwidth in units of grid spacing.
    pub bandwidth_factor: f64,
    /// Grid padding beyond the data range, in bandwidths.
    pub padding: f64,
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
}

impl Default for DeconOptions {
    fn default() -> Self {
        DeconOptions {
            grid_points: 128,
            penalty: PenaltyChoice::Fixed(1.0),
            bandwidth_factor: 1.5,
            padding: 3.0,
            max_iter: 5000,
            tol: 1e-8,
        }
    }
}

impl DeconOptions {
    pub fn validate(&self) -> Result<()> {
        let span = 2.0 * self.padding * self.bandwidth_factor;
        if !(self.bandwidth_factor > 0.0) || !(self.padding >= 0.0) {
            return Err(Error::InvalidConfig("bandwidth and padding must be positive".into()));
        }
        if (self.grid_points as f64) < span + 3.0 {
            return Err(Error::InvalidConfig("grid too small for its padding".into()));
        }
        if let PenaltyChoice::Fixed(tau) = self.penalty {
            if !(tau >= 0.0) || !tau.is_finite() {
                return Err(Error::InvalidConfig("penalty must be finite and non-negative".into()));
            }
        }
        if self.max_iter < 1 || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("max_iter and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Kernel-mixture estimate of the error-free density.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeconDensity {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub penalty: f64,
    /// Penalized log-likelihood at the returned weights.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Held-out log-likelihood per candidate penalty, when cross-validated.
    pub cv_scores: Option<Vec<(f64, f64)>>,
}

impl DeconDensity {
    /// Builds a density from explicit parts; weights are renormalized.
    pub fn from_parts(grid: Vec<f64>, weights: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if grid.is_empty() || grid.len() != weights.len() || !(bandwidth > 0.0) {
            return Err(Error::InvalidConfig("grid, weights and bandwidth are inconsistent".into()));
        }
        if grid.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::InvalidConfig("grid must be strictly increasing".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidConfig("weights must be non-negative with positive sum".into()));
        }
        Ok(DeconDensity {
            grid,
            weights: weights.iter().map(|w| w / total).collect(),
            bandwidth,
            penalty: 0.0,
            objective: f64::NAN,
            iterations: 0,
            converged: true,
            cv_scores: None,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * normal_pdf((x - g) / h) / h)
            .sum()
    }

    /// `P(λ₀ > x)` from the exact Gaussian tails.
    pub fn survival(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .grid
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * normal_sf((x - g) / h))
            .sum();
        s.clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let spread: f64 = self
            .grid
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * (g - mu) * (g - mu))
            .sum();
        spread + self.bandwidth * self.bandwidth
    }

    pub fn sd(&self) -> f64 {
        libm::sqrt(self.variance())
    }

    /// `points` equally spaced `(x, f(x))` pairs covering the grid ± 3h.
    pub fn evaluate(&self, points: usize) -> Vec<(f64, f64)> {
        let lo = self.grid[0] - 3.0 * self.bandwidth;
        let hi = self.grid[self.grid.len() - 1] + 3.0 * self.bandwidth;
        let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
        (0..points)
            .map(|i| {
                let x = lo + step * i as f64;
                (x, self.density(x))
            })
            .collect()
    }

    /// Draws one value from the fitted density.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (g, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = g;
                break;
            }
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.grid[idx] + self.bandwidth * z
    }

    /// Squared norm of the second differences of the weights.
    pub fn roughness(&self) -> f64 {
        roughness(&self.weights)
    }
}

fn roughness(w: &[f64]) -> f64 {
    w.windows(3)
        .map(|t| {
            let d = t[0] - 2.0 * t[1] + t[2];
            d * d
        })
        .sum()
}

/// `(DᵀD w)` where `D` is the second-difference operator.
fn roughness_gradient(w: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for g in 1..w.len().saturating_sub(1) {
        let d = w[g - 1] - 2.0 * w[g] + w[g + 1];
        out[g - 1] += d;
        out[g] -= 2.0 * d;
        out[g + 1] += d;
    }
}

struct Design {
    grid: Vec<f64>,
    bandwidth: f64,
    /// `N × G`, row `i` holds `(1/|E|) Σ_j φ_h(λ*_i − e_j − x_g)`.
    a: Vec<f64>,
    rows: usize,
}

impl Design {
    fn build(contaminated: &[f64], errors: &[f64], opts: &DeconOptions) -> Result<Self> {
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = min(contaminated) - max(errors);
        let hi = max(contaminated) - min(errors);
        let span = hi - lo;
        if !span.is_finite() || span <= 1e-12 * (1.0 + libm::fabs(lo) + libm::fabs(hi)) {
            return Err(Error::DegenerateGrid);
        }
        let g_count = opts.grid_points;
        // (G − 1)·Δ = span + 2·padding·h with h = factor·Δ.
        let spacing = span / ((g_count - 1) as f64 - 2.0 * opts.padding * opts.bandwidth_factor);
        let h = opts.bandwidth_factor * spacing;
        let start = lo - opts.padding * h;
        let grid: Vec<f64> = (0..g_count).map(|g| start + spacing * g as f64).collect();

        let reach = libm::ceil(KERNEL_REACH * opts.bandwidth_factor) as isize + 1;
        let n = contaminated.len();
        let inv = 1.0 / errors.len() as f64;
        let mut a = vec![0.0; n * g_count];
        for (i, &lam) in contaminated.iter().enumerate() {
            let row = &mut a[i * g_count..(i + 1) * g_count];
            for &e in errors {
                let y = lam - e;
                let centre = libm::round((y - start) / spacing) as isize;
                let first = (centre - reach).max(0) as usize;
                let last = ((centre + reach).min(g_count as isize - 1)).max(-1);
                if last < first as isize {
                    continue;
                }
                for (g, cell) in row.iter_mut().enumerate().take(last as usize + 1).skip(first) {
                    *cell += inv * normal_pdf((y - grid[g]) / h) / h;
                }
            }
        }
        Ok(Design {
            grid,
            bandwidth: h,
            a,
            rows: n,
        })
    }

    fn g(&self) -> usize {
        self.grid.len()
    }
}

struct Fit {
    weights: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn loglik_rows(design: &Design, rows: &[usize], w: &[f64]) -> f64 {
    let g = design.g();
    rows.iter()
        .map(|&i| {
            let row = &design.a[i * g..(i + 1) * g];
            let l: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            libm::log(l.max(1e-300))
        })
        .sum()
}

fn penalized(design: &Design, rows: &[usize], w: &[f64], tau: f64) -> f64 {
    loglik_rows(design, rows, w) - tau * roughness(w)
}

fn optimize(design: &Design, rows: &[usize], tau: f64, opts: &DeconOptions, mut trace: Option<&mut Vec<f64>>) -> Fit {
    let g = design.g();
    let mut w = vec![1.0 / g as f64; g];
    let mut objective = penalized(design, rows, &w, tau);
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }
    let mut score = vec![0.0; g];
    let mut rough_grad = vec![0.0; g];
    let mut proposal = vec![0.0; g];
    let mut trial = vec![0.0; g];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        score.fill(0.0);
        for &i in rows {
            let row = &design.a[i * g..(i + 1) * g];
            let l: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().max(1e-300);
            for (s, a) in score.iter_mut().zip(row) {
                *s += a / l;
            }
        }
        roughness_gradient(&w, &mut rough_grad);
        let mut total = 0.0;
        for gi in 0..g {
            let grad = score[gi] - 2.0 * tau * rough_grad[gi];
            proposal[gi] = w[gi] * grad.max(0.05 * score[gi]);
            total += proposal[gi];
        }
        if !(total > 0.0) || !total.is_finite() {
            break;
        }
        for p in proposal.iter_mut() {
            *p /= total;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            for gi in 0..g {
                trial[gi] = w[gi] + step * (proposal[gi] - w[gi]);
            }
            let value = penalized(design, rows, &trial, tau);
            if value >= objective {
                accepted = Some(value);
                break;
            }
            step *= 0.5;
        }
        let Some(value) = accepted else {
            converged = true;
            break;
        };
        let change = value - objective;
        core::mem::swap(&mut w, &mut trial);
        objective = value;
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective);
        }
        if change <= opts.tol * libm::fabs(objective) {
            converged = true;
            break;
        }
    }
    // Renormalize to absorb rounding drift.
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    Fit {
        objective: penalized(design, rows, &w, tau),
        weights: w,
        iterations,
        converged,
    }
}

fn cross_validate(design: &Design, opts: &DeconOptions) -> Vec<(f64, f64)> {
    PENALTY_CANDIDATES
        .iter()
        .map(|&tau| {
            let mut held_out = 0.0;
            for fold in 0..CV_FOLDS {
                let train: Vec<usize> = (0..design.rows).filter(|i| i % CV_FOLDS != fold).collect();
                let test: Vec<usize> = (0..design.rows).filter(|i| i % CV_FOLDS == fold).collect();
                let fit = optimize(design, &train, tau, opts, None);
                held_out += loglik_rows(design, &test, &fit.weights);
            }
            (tau, held_out)
        })
        .collect()
}

/// Estimates the density of `λ₀` from `contaminated = λ₀ + e` and a pure
/// sample of `e`.
///
/// If the iteration limit is hit the best iterate is returned with
/// `converged = false`.
pub fn deconvolve(contaminated: &[f64], errors: &[f64], opts: &DeconOptions) -> Result<DeconDensity> {
    opts.validate()?;
    if contaminated.is_empty() || errors.is_empty() {
        return Err(Error::EmptySample);
    }
    if contaminated.iter().chain(errors).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("samples must be finite".into()));
    }
    let design = Design::build(contaminated, errors, opts)?;
    let all: Vec<usize> = (0..design.rows).collect();
    let (tau, cv_scores) = match opts.penalty {
        PenaltyChoice::Fixed(tau) => (tau, None),
        PenaltyChoice::CrossValidated if design.rows < CV_FOLDS => (1.0, None),
        PenaltyChoice::CrossValidated => {
            let scores = cross_validate(&design, opts);
            let mut best = scores[0];
            for &s in &scores[1..] {
                if s.1 > best.1 {
                    best = s;
                }
            }
            (best.0, Some(scores))
        }
    };
    let fit = optimize(&design, &all, tau, opts, None);
    Ok(DeconDensity {
        grid: design.grid,
        weights: fit.weights,
        bandwidth: design.bandwidth,
        penalty: tau,
        objective: fit.objective,
        iterations: fit.iterations,
        converged: fit.converged,
        cv_scores,
    })
}

/// Penalized kernel-mixture fit of a sample without measurement error.
pub fn fit_density(sample: &[f64], opts: &DeconOptions) -> Result<DeconDensity> {
    deconvolve(sample, &[0.0], opts)
}

/// Upper-tail p-value `∫_{λ_obs}^∞ f`.
pub fn pvalue_decon(density: &DeconDensity, lambda_obs: f64) -> f64 {
    density.survival(lambda_obs)
}

/// Add-one empirical p-value `(1 + #{λ*_b ≥ λ_obs}) / (B + 1)`.
pub fn pvalue_empirical(sample: &[f64], lambda_obs: f64) -> f64 {
    let exceed = sample.iter().filter(|&&v| v >= lambda_obs).count();
    (1 + exceed) as f64 / (sample.len() + 1) as f64
}

/// Penalized objective after every accepted step of a fixed-penalty fit,
/// starting from the uniform weights.
pub fn objective_trace(contaminated: &[f64], errors: &[f64], tau: f64, opts: &DeconOptions) -> Result<Vec<f64>> {
    opts.validate()?;
    if contaminated.is_empty() || errors.is_empty() {
        return Err(Error::EmptySample);
    }
    let design = Design::build(contaminated, errors, opts)?;
    let all: Vec<usize> = (0..design.rows).collect();
    let mut trace = Vec::new();
    optimize(&design, &all, tau, opts, Some(&mut trace));
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Exp, Normal};

    #[test]
    fn pvalue_decon_limits() {
        let d = DeconDensity::from_parts(vec![-1.0, 0.0, 2.0], vec![0.2, 0.5, 0.3], 0.4).unwrap();
        assert!(pvalue_decon(&d, -1.0 - 10.0 * 0.4 - 1.0) >= 1.0 - 1e-6);
        assert!(pvalue_decon(&d, 2.0 + 10.0 * 0.4) <= 1e-6);
        let single = DeconDensity::from_parts(vec![0.0], vec![1.0], 1.0).unwrap();
        assert_relative_eq!(pvalue_decon(&single, 0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pvalue_decon_is_monotone() {
        let d = DeconDensity::from_parts(vec![0.0, 1.0, 3.0, 4.0], vec![0.1, 0.4, 0.3, 0.2], 0.7).unwrap();
        let mut last = 1.0;
        for i in 0..200 {
            let p = pvalue_decon(&d, -5.0 + i as f64 * 0.07);
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn empirical_pvalue_add_one_rule() {
        let sample: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(pvalue_empirical(&sample, -1.0), 1.0);
        assert_eq!(pvalue_empirical(&sample, 100.0), 1.0 / 51.0);
        let odd: Vec<f64> = (0..49).map(|i| i as f64 * 1.5).collect();
        // Median of 49 distinct values: 25 values are ≥ it.
        let p = pvalue_empirical(&odd, 24.0 * 1.5);
        assert_eq!(p, 26.0 / 50.0);
        assert!((p - 0.5).abs() <= 1.0 / 50.0 + 1e-12);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let err = deconvolve(&[2.0, 2.0, 2.0], &[0.0, 0.0], &DeconOptions::default());
        assert_eq!(err, Err(Error::DegenerateGrid));
        assert_eq!(deconvolve(&[], &[0.0], &DeconOptions::default()), Err(Error::EmptySample));
        assert_eq!(deconvolve(&[1.0], &[], &DeconOptions::default()), Err(Error::EmptySample));
    }

    #[test]
    fn weights_on_simplex_and_density_integrates() {
        let mut rng = seed::rng(4);
        let normal = Normal::new(3.0, 1.0).unwrap();
        let sample: Vec<f64> = (0..80).map(|_| normal.sample(&mut rng)).collect();
        let errors: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng) - 3.0).collect();
        let d = deconvolve(&sample, &errors, &DeconOptions::default()).unwrap();
        assert!(d.weights.iter().all(|&w| w >= 0.0));
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        // Trapezoid rule over a wide window.
        let lo = d.grid[0] - 12.0 * d.bandwidth;
        let hi = d.grid[d.grid.len() - 1] + 12.0 * d.bandwidth;
        let steps = 20_000;
        let dx = (hi - lo) / steps as f64;
        let mut integral = 0.5 * (d.density(lo) + d.density(hi));
        for s in 1..steps {
            integral += d.density(lo + dx * s as f64);
        }
        integral *= dx;
        assert!((integral - 1.0).abs() <= 1e-6, "integral = {integral}");
    }

    #[test]
    fn objective_ascends_from_uniform() {
        let mut rng = seed::rng(9);
        let exp = Exp::new(0.5).unwrap();
        let sample: Vec<f64> = (0..60).map(|_| 4.0 + exp.sample(&mut rng)).collect();
        let errors: Vec<f64> = (0..30).map(|_| exp.sample(&mut rng)).collect();
        let trace = objective_trace(&sample, &errors, 1.0, &DeconOptions::default()).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10 * pair[0].abs(), "{pair:?}");
        }
        let d = deconvolve(&sample, &errors, &DeconOptions::default()).unwrap();
        assert!(d.objective >= trace[0]);
    }

    #[test]
    fn larger_penalty_is_smoother() {
        let mut rng = seed::rng(21);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sample: Vec<f64> = (0..100).map(|_| normal.sample(&mut rng)).collect();
        let errors: Vec<f64> = (0..50).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0] {
            let opts = DeconOptions {
                penalty: PenaltyChoice::Fixed(tau),
                ..DeconOptions::default()
            };
            let r = deconvolve(&sample, &errors, &opts).unwrap().roughness();
            assert!(r < last, "tau {tau}: {r} !< {last}");
            last = r;
        }
    }
}
