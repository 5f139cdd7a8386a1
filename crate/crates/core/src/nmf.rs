//! Multiplicative-update NMF under the Poisson (generalized KL) and Gaussian
//! (squared error) objectives, with multi-start search and a masked variant
//! for held-out imputation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{DataMatrix, ModelFamily, ModelKind, INTEGRALITY_TOL, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::exec::{collect_ordered, Executor};
use crate::likelihood::{gaussian_loglik, poisson_loglik, POISSON_MEAN_FLOOR};
use crate::matrix::{matmul_into, Matrix};
use crate::seed;

/// Added to every multiplicative-update denominator.
pub const DENOM_EPS: f64 = 1e-16;
/// Entries of `T` and `W` never drop below this value.
pub const ENTRY_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once one full `W`+`T` sweep changes the objective by less than
    /// this fraction.
    pub rel_tol: f64,
    /// Multiplier on the scale that makes `sum(T·W) = sum(X)` at the start.
    pub init_scale: f64,
    /// Keep the per-sweep objective values in [`Factorization::objective_trace`].
    #[cfg_attr(feature = "serde", serde(default, skip_serializing))]
    pub record_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 2000,
            rel_tol: 1e-6,
            init_scale: 1.0,
            record_trace: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// A fitted rank-`k` factorization `X ≈ T·W`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Factorization {
    /// `p × k` features.
    pub t: Matrix,
    /// `k × n` weights.
    pub w: Matrix,
    pub k: usize,
    pub loglik: f64,
    /// For the Gaussian family, carries this fit's own variance estimate.
    pub model: ModelFamily,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Final value of the minimized objective (KL divergence or squared error).
    pub objective: f64,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing))]
    pub objective_trace: Vec<f64>,
}

impl Factorization {
    pub fn mean(&self) -> Matrix {
        self.t.matmul(&self.w).expect("factor shapes agree")
    }
}

/// Observation mask; `true` marks an observed entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn all_observed(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            observed: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                observed.push(f(i, j));
            }
        }
        Mask {
            rows,
            cols,
            observed,
        }
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Errors on the first row or column (1-based) without an observed entry.
    pub fn check_coverage(&self) -> Result<()> {
        for i in 0..self.rows {
            if !(0..self.cols).any(|j| self.is_observed(i, j)) {
                return Err(Error::MaskedRow(i + 1));
            }
        }
        for j in 0..self.cols {
            if !(0..self.rows).any(|i| self.is_observed(i, j)) {
                return Err(Error::MaskedColumn(j + 1));
            }
        }
        Ok(())
    }
}

trait Observed {
    const ALL: bool;
    fn get(&self, idx: usize) -> bool;
}

struct Full;

impl Observed for Full {
    const ALL: bool = true;
    #[inline(always)]
    fn get(&self, _: usize) -> bool {
        true
    }
}

impl Observed for Mask {
    const ALL: bool = false;
    #[inline(always)]
    fn get(&self, idx: usize) -> bool {
        self.observed[idx]
    }
}

/// Fits a rank-`k` NMF from a single random start.
///
/// The result is a deterministic function of `(x, k, model, seed, opts)`.
pub fn fit_nmf(x: &DataMatrix, k: usize, model: ModelKind, seed: u64, opts: &FitOptions) -> Result<Factorization> {
    check_rank(x, k)?;
    opts.validate()?;
    fit_with(x.values(), &Full, k, model, seed, opts)
}

/// Fits using only the entries marked observed in `mask`.
pub fn fit_nmf_masked(
    x: &DataMatrix,
    mask: &Mask,
    k: usize,
    model: ModelKind,
    seed: u64,
    opts: &FitOptions,
) -> Result<Factorization> {
    check_rank(x, k)?;
    opts.validate()?;
    if mask.shape() != (x.p(), x.n()) {
        return Err(Error::ShapeMismatch {
            expected_rows: x.p(),
            expected_cols: x.n(),
            rows: mask.rows,
            cols: mask.cols,
        });
    }
    mask.check_coverage()?;
    fit_with(x.values(), mask, k, model, seed, opts)
}

fn check_rank(x: &DataMatrix, k: usize) -> Result<()> {
    let max = x.p().min(x.n());
    if k < 1 || k > max {
        return Err(Error::RankOutOfRange { k, max });
    }
    Ok(())
}

/// Runs the multiplicative updates from the given factors instead of a random
/// start. Entries are floored at [`ENTRY_FLOOR`], so a zero feature stays
/// numerically negligible. The returned `seed` is 0.
pub fn fit_nmf_from(x: &DataMatrix, t0: &Matrix, w0: &Matrix, model: ModelKind, opts: &FitOptions) -> Result<Factorization> {
    let k = t0.cols();
    check_rank(x, k)?;
    opts.validate()?;
    t0.ensure_shape(x.p(), k)?;
    w0.ensure_shape(k, x.n())?;
    if let Some(&bad) = t0.as_slice().iter().chain(w0.as_slice()).find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("starting factors must be finite and non-negative, got {bad}")));
    }
    let t = t0.map(|v| v.max(ENTRY_FLOOR));
    let w = w0.map(|v| v.max(ENTRY_FLOOR));
    iterate(x.values(), &Full, t, w, model, 0, opts)
}

fn fit_with<O: Observed>(
    x: &Matrix,
    obs: &O,
    k: usize,
    model: ModelKind,
    seed: u64,
    opts: &FitOptions,
) -> Result<Factorization> {
    let (p, n) = x.shape();
    let mut rng = seed::rng(seed);
    let t = Matrix::from_fn(p, k, |_, _| rng.random_range(0.1..1.1));
    let mut w = Matrix::from_fn(k, n, |_, _| rng.random_range(0.1..1.1));

    let mut mean = Matrix::zeros(p, n);
    matmul_into(&t, &w, &mut mean);
    let mut data_sum = 0.0;
    let mut fit_sum = 0.0;
    for (idx, (&xv, &mv)) in x.as_slice().iter().zip(mean.as_slice()).enumerate() {
        if obs.get(idx) {
            data_sum += xv;
            fit_sum += mv;
        }
    }
    if data_sum > 0.0 {
        let scale = opts.init_scale * data_sum / fit_sum;
        for v in w.as_mut_slice() {
            *v = (*v * scale).max(ENTRY_FLOOR);
        }
    }
    iterate(x, obs, t, w, model, seed, opts)
}

fn iterate<O: Observed>(
    x: &Matrix,
    obs: &O,
    mut t: Matrix,
    mut w: Matrix,
    model: ModelKind,
    seed: u64,
    opts: &FitOptions,
) -> Result<Factorization> {
    let (p, n) = x.shape();
    let k = t.cols();
    let mut mean = Matrix::zeros(p, n);
    matmul_into(&t, &w, &mut mean);
    let mut state = Workspace::new(p, n, k);
    let objective_of = |mean: &Matrix, iteration: usize| -> Result<f64> {
        let v = match model {
            ModelKind::Poisson => kl_objective(x, obs, mean),
            ModelKind::Gaussian => squared_error(x, obs, mean),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteObjective { iteration })
        }
    };
    let scale = match model {
        ModelKind::Poisson => observed_sum(x, obs, |v| v),
        ModelKind::Gaussian => observed_sum(x, obs, |v| v * v),
    };

    let mut objective = objective_of(&mean, 0)?;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(objective);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        match model {
            ModelKind::Poisson => kl_sweep(x, obs, &mut t, &mut w, &mut mean, &mut state),
            ModelKind::Gaussian => ls_sweep(x, obs, &mut t, &mut w, &mut mean, &mut state),
        }
        let next = objective_of(&mean, iterations)?;
        if opts.record_trace {
            trace.push(next);
        }
        let change = libm::fabs(objective - next);
        let done = change <= opts.rel_tol * libm::fabs(objective) || next <= f64::EPSILON * scale;
        objective = next;
        if done {
            converged = true;
            break;
        }
    }

    let (loglik, family) = match model {
        ModelKind::Poisson => (poisson_loglik_observed(x, obs, &mean)?, ModelFamily::Poisson),
        ModelKind::Gaussian => {
            let count = (0..p * n).filter(|&i| obs.get(i)).count() as f64;
            let variance = (objective / count).max(VARIANCE_FLOOR);
            (
                gaussian_loglik_observed(x, obs, &mean, variance)?,
                ModelFamily::Gaussian { variance },
            )
        }
    };
    Ok(Factorization {
        t,
        w,
        k,
        loglik,
        model: family,
        seed,
        iterations,
        converged,
        objective,
        objective_trace: trace,
    })
}

fn observed_sum<O: Observed>(x: &Matrix, obs: &O, f: impl Fn(f64) -> f64) -> f64 {
    x.as_slice()
        .iter()
        .enumerate()
        .filter(|(idx, _)| obs.get(*idx))
        .map(|(_, &v)| f(v))
        .sum()
}

fn poisson_loglik_observed<O: Observed>(x: &Matrix, obs: &O, mean: &Matrix) -> Result<f64> {
    if O::ALL {
        return poisson_loglik(x, mean);
    }
    let mut total = 0.0;
    for (idx, (&xv, &m)) in x.as_slice().iter().zip(mean.as_slice()).enumerate() {
        if !obs.get(idx) {
            continue;
        }
        if libm::fabs(xv - libm::round(xv)) > INTEGRALITY_TOL {
            let cols = x.cols();
            return Err(Error::NonIntegerCount {
                row: idx / cols + 1,
                col: idx % cols + 1,
                value: xv,
            });
        }
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

fn gaussian_loglik_observed<O: Observed>(x: &Matrix, obs: &O, mean: &Matrix, variance: f64) -> Result<f64> {
    if O::ALL {
        return gaussian_loglik(x, mean, variance);
    }
    let mut rss = 0.0;
    let mut count = 0.0;
    for (idx, (&xv, &m)) in x.as_slice().iter().zip(mean.as_slice()).enumerate() {
        if obs.get(idx) {
            rss += (xv - m) * (xv - m);
            count += 1.0;
        }
    }
    let total = -0.5 * count * libm::log(2.0 * core::f64::consts::PI * variance) - rss / (2.0 * variance);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFiniteLoglik)
    }
}

/// Generalized KL divergence `Σ [x ln(x/m) − x + m]` over observed cells.
fn kl_objective<O: Observed>(x: &Matrix, obs: &O, mean: &Matrix) -> f64 {
    let mut total = 0.0;
    for (idx, (&xv, &m)) in x.as_slice().iter().zip(mean.as_slice()).enumerate() {
        if obs.get(idx) {
            total += m - xv;
            if xv > 0.0 {
                total += xv * libm::log(xv / m);
            }
        }
    }
    total
}

fn squared_error<O: Observed>(x: &Matrix, obs: &O, mean: &Matrix) -> f64 {
    let mut total = 0.0;
    for (idx, (&xv, &m)) in x.as_slice().iter().zip(mean.as_slice()).enumerate() {
        if obs.get(idx) {
            total += (xv - m) * (xv - m);
        }
    }
    total
}

struct Workspace {
    /// `p × n` scratch (ratio for KL, observed mean for least squares).
    ratio: Matrix,
    /// `k × n`
    num_w: Matrix,
    den_w: Matrix,
    /// `p × k`
    num_t: Matrix,
    den_t: Matrix,
    /// `p × n` observed data, least squares only.
    data: Option<Matrix>,
}

impl Workspace {
    fn new(p: usize, n: usize, k: usize) -> Self {
        Workspace {
            ratio: Matrix::zeros(p, n),
            num_w: Matrix::zeros(k, n),
            den_w: Matrix::zeros(k, n),
            num_t: Matrix::zeros(p, k),
            den_t: Matrix::zeros(p, k),
            data: None,
        }
    }
}

/// `out = aᵀ · b` for `a: p×k`, `b: p×n`.
fn tmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let k = a.cols();
    let n = b.cols();
    out.as_mut_slice().fill(0.0);
    for i in 0..a.rows() {
        let b_row = b.row(i);
        for (l, &a_il) in a.row(i).iter().enumerate() {
            let out_row = &mut out.as_mut_slice()[l * n..(l + 1) * n];
            for (o, &v) in out_row.iter_mut().zip(b_row) {
                *o += a_il * v;
            }
        }
        let _ = k;
    }
}

/// `out = a · bᵀ` for `a: p×n`, `b: k×n`.
fn mult_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let k = b.rows();
    for i in 0..a.rows() {
        let a_row = a.row(i);
        for l in 0..k {
            let mut s = 0.0;
            for (&u, &v) in a_row.iter().zip(b.row(l)) {
                s += u * v;
            }
            out[(i, l)] = s;
        }
    }
}

/// Denominators of the KL updates: `Σ_i T_ia` restricted to observed cells.
fn kl_den_w<O: Observed>(obs: &O, t: &Matrix, n: usize, den: &mut Matrix) {
    let k = t.cols();
    den.as_mut_slice().fill(0.0);
    if O::ALL {
        let sums = t.column_sums();
        for a in 0..k {
            den.row_mut(a).fill(sums[a]);
        }
        return;
    }
    for i in 0..t.rows() {
        for a in 0..k {
            let t_ia = t[(i, a)];
            let row = den.row_mut(a);
            for (j, d) in row.iter_mut().enumerate() {
                if obs.get(i * n + j) {
                    *d += t_ia;
                }
            }
        }
    }
}

fn kl_den_t<O: Observed>(obs: &O, w: &Matrix, p: usize, den: &mut Matrix) {
    let k = w.rows();
    let n = w.cols();
    if O::ALL {
        let sums = w.row_sums();
        for i in 0..p {
            den.row_mut(i).copy_from_slice(&sums);
        }
        return;
    }
    for i in 0..p {
        for a in 0..k {
            let mut s = 0.0;
            for (j, &v) in w.row(a).iter().enumerate() {
                if obs.get(i * n + j) {
                    s += v;
                }
            }
            den[(i, a)] = s;
        }
    }
}

fn fill_kl_ratio<O: Observed>(x: &Matrix, obs: &O, mean: &Matrix, ratio: &mut Matrix) {
    for (idx, ((r, &xv), &m)) in ratio
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .zip(mean.as_slice())
        .enumerate()
    {
        *r = if obs.get(idx) && xv > 0.0 {
            xv / (m + DENOM_EPS)
        } else {
            0.0
        };
    }
}

#[inline]
fn apply_update(target: &mut Matrix, num: &Matrix, den: &Matrix) {
    for ((v, &a), &b) in target
        .as_mut_slice()
        .iter_mut()
        .zip(num.as_slice())
        .zip(den.as_slice())
    {
        *v = (*v * a / (b + DENOM_EPS)).max(ENTRY_FLOOR);
    }
}

/// One Lee–Seung KL sweep. `mean` holds `T·W` on entry and on exit.
fn kl_sweep<O: Observed>(x: &Matrix, obs: &O, t: &mut Matrix, w: &mut Matrix, mean: &mut Matrix, ws: &mut Workspace) {
    let (p, n) = x.shape();
    fill_kl_ratio(x, obs, mean, &mut ws.ratio);
    tmul_into(t, &ws.ratio, &mut ws.num_w);
    kl_den_w(obs, t, n, &mut ws.den_w);
    apply_update(w, &ws.num_w, &ws.den_w);

    matmul_into(t, w, mean);
    fill_kl_ratio(x, obs, mean, &mut ws.ratio);
    mult_into(&ws.ratio, w, &mut ws.num_t);
    kl_den_t(obs, w, p, &mut ws.den_t);
    apply_update(t, &ws.num_t, &ws.den_t);

    matmul_into(t, w, mean);
}

fn mask_into<O: Observed>(obs: &O, src: &Matrix, out: &mut Matrix) {
    for (idx, (o, &v)) in out.as_mut_slice().iter_mut().zip(src.as_slice()).enumerate() {
        *o = if obs.get(idx) { v } else { 0.0 };
    }
}

/// One Lee–Seung squared-error sweep. `mean` holds `T·W` on entry and on exit.
fn ls_sweep<O: Observed>(x: &Matrix, obs: &O, t: &mut Matrix, w: &mut Matrix, mean: &mut Matrix, ws: &mut Workspace) {
    let data = ws.data.get_or_insert_with(|| {
        let mut d = Matrix::zeros(x.rows(), x.cols());
        mask_into(obs, x, &mut d);
        d
    });
    tmul_into(t, data, &mut ws.num_w);
    mask_into(obs, mean, &mut ws.ratio);
    tmul_into(t, &ws.ratio, &mut ws.den_w);
    apply_update(w, &ws.num_w, &ws.den_w);

    matmul_into(t, w, mean);
    mult_into(data, w, &mut ws.num_t);
    mask_into(obs, mean, &mut ws.ratio);
    mult_into(&ws.ratio, w, &mut ws.den_t);
    apply_update(t, &ws.num_t, &ws.den_t);

    matmul_into(t, w, mean);
}

/// Outcome of `m` independent starts at one rank.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MultiStartResult {
    pub best: Factorization,
    pub best_start: usize,
    /// `l_i(k)` in start order.
    pub all_logliks: Vec<f64>,
    /// Per-start variance estimates (Gaussian family only; empty otherwise).
    pub all_variances: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Runs `m` starts with seeds derived from `(master_seed, k, start)` and keeps
/// the highest log-likelihood, ties going to the lowest start index.
pub fn multi_start_fit<E: Executor>(
    x: &DataMatrix,
    k: usize,
    model: ModelKind,
    m: usize,
    master_seed: u64,
    opts: &FitOptions,
    exec: &E,
) -> Result<MultiStartResult> {
    if m < 1 {
        return Err(Error::InvalidConfig("at least one start is required".into()));
    }
    check_rank(x, k)?;
    opts.validate()?;
    let seeds: Vec<u64> = (0..m).map(|i| seed::start_seed(master_seed, k, i)).collect();
    let fits = exec.map(m, |i| {
        fit_with(x.values(), &Full, k, model, seeds[i], opts).map_err(|e| Error::in_start(i, e))
    });
    let fits = collect_ordered(fits)?;
    let all_logliks: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    let all_variances: Vec<f64> = fits.iter().filter_map(|f| f.model.variance()).collect();
    let mut best_start = 0;
    for (i, &l) in all_logliks.iter().enumerate() {
        if l > all_logliks[best_start] {
            best_start = i;
        }
    }
    let best = fits.into_iter().nth(best_start).expect("m >= 1");
    Ok(MultiStartResult {
        best,
        best_start,
        all_logliks,
        all_variances,
        seeds,
    })
}
