//! Synthetic data generators for the simulation scenarios: sparse gamma
//! features, controlled-distance feature perturbations, uniform and Dirichlet
//! weights, Poisson and truncated-Normal noise, and a non-NMF log-normal
//! count model.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, LogNormal, Normal, StandardNormal, Uniform};

use crate::bootstrap::draw_poisson;
use crate::data::{DataMatrix, SelectionConfig};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::matrix::Matrix;
use crate::seed::{self, stream};
use crate::select::{select_rank, RankReport, Runtime};
use crate::stats;

pub const FEATURE_SHAPE: f64 = 3.0;
pub const FEATURE_RATE: f64 = 2.0;
pub const FEATURE_KEEP: f64 = 0.7;
pub const DIRICHLET_ALPHA: f64 = 1.5;
pub const DIRICHLET_SCALE: f64 = 10.0;
pub const NON_NMF_LOG_MEAN: f64 = 4.0;
pub const NON_NMF_LOG_SD: f64 = 3.0;
pub const NON_NMF_MIN_EIGEN: f64 = 3e-7;
const COLUMN_REDRAWS: usize = 1000;

/// Sparse gamma draws before normalization: `Gamma(3, rate 2) · Bernoulli(0.7)`.
pub fn sparse_gamma_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let gamma = Gamma::new(FEATURE_SHAPE, 1.0 / FEATURE_RATE).expect("valid gamma");
    let keep = Bernoulli::new(FEATURE_KEEP).expect("valid probability");
    Matrix::from_fn(rows, cols, |_, _| {
        let g = gamma.sample(rng);
        if keep.sample(rng) {
            g
        } else {
            0.0
        }
    })
}

/// `p × k` feature matrix with unit column sums. Rows that are zero in every
/// column are removed, so the result can have fewer than `p` rows; columns
/// that come out all zero are redrawn.
pub fn gen_base_features(p: usize, k: usize, seed_value: u64) -> Result<Matrix> {
    Ok(normalize_columns(&gen_raw_features(p, k, seed_value)?))
}

/// Same draws as [`gen_base_features`] without the column normalization.
/// Used for Normal data, whose unit noise variance is fixed on the raw scale.
pub fn gen_raw_features(p: usize, k: usize, seed_value: u64) -> Result<Matrix> {
    if p == 0 || k == 0 {
        return Err(Error::InvalidConfig(format!("feature matrix needs p, k ≥ 1 (got {p}×{k})")));
    }
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::FEATURES]));
    let mut raw = sparse_gamma_matrix(&mut rng, p, k);
    for a in 0..k {
        let mut tries = 0;
        while raw.column(a).iter().all(|&v| v == 0.0) {
            tries += 1;
            if tries > COLUMN_REDRAWS {
                return Err(Error::DegenerateFeatures("feature column stayed all zero"));
            }
            let fresh = sparse_gamma_matrix(&mut rng, p, 1);
            raw.set_column(a, fresh.as_slice());
        }
    }
    Ok(raw.select_rows(|i| raw.row(i).iter().any(|&v| v > 0.0)))
}

fn normalize_columns(m: &Matrix) -> Matrix {
    let sums = m.column_sums();
    Matrix::from_fn(m.rows(), m.cols(), |i, a| m[(i, a)] / sums[a])
}

fn clip_normalize(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    clipped.iter().map(|&x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Gram–Schmidt basis of the span of `dirs`.
fn orthonormal_basis(dirs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for d in dirs {
        let mut v = d.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let len = norm(&v);
        if len < 1e-12 * norm(d).max(f64::MIN_POSITIVE) || len == 0.0 {
            return Err(Error::DegenerateFeatures("feature columns are linearly dependent"));
        }
        basis.push(v.iter().map(|x| x / len).collect());
    }
    Ok(basis)
}

/// Residual of `v` after removing its projection on the affine plane through
/// `origin` with orthonormal direction basis `basis`.
fn plane_residual(v: &[f64], origin: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut r = sub(v, origin);
    for b in basis {
        let c = dot(&r, b);
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    r
}

/// Feature matrix plus the bookkeeping for a controlled-distance perturbation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbedFeatures {
    pub features: Matrix,
    /// Requested distance `d`.
    pub distance: f64,
    /// Distance before clipping and renormalization (equals `d` by construction).
    pub raw_distance: f64,
    /// Distance of the final, renormalized column.
    pub realized_distance: f64,
}

/// Appends a fourth feature at distance `d` from the plane of the three
/// given ones, on the perpendicular through their centroid pointing toward
/// the all-ones direction.
pub fn perturb_fourth_feature(features: &Matrix, d: f64) -> Result<PerturbedFeatures> {
    if features.cols() != 3 {
        return Err(Error::ShapeMismatch {
            expected_rows: features.rows(),
            expected_cols: 3,
            rows: features.rows(),
            cols: features.cols(),
        });
    }
    if !(d >= 0.0) {
        return Err(Error::InvalidConfig(format!("distance must be ≥ 0, got {d}")));
    }
    let p = features.rows();
    let (f1, f2, f3) = (features.column(0), features.column(1), features.column(2));
    let basis = orthonormal_basis(&[sub(&f2, &f1), sub(&f3, &f1)])?;
    let unit = vec![1.0 / libm::sqrt(p as f64); p];
    let zero = vec![0.0; p];
    let u = plane_residual(&unit, &zero, &basis);
    let u_len = norm(&u);
    if u_len < 1e-10 {
        return Err(Error::DegenerateFeatures("all-ones direction lies in the feature plane"));
    }
    let centroid: Vec<f64> = (0..p).map(|i| (f1[i] + f2[i] + f3[i]) / 3.0).collect();
    let raw: Vec<f64> = (0..p).map(|i| centroid[i] + d * u[i] / u_len).collect();
    let raw_distance = norm(&plane_residual(&raw, &f1, &basis));
    let f4 = if d == 0.0 { centroid } else { clip_normalize(&raw) };
    let realized_distance = norm(&plane_residual(&f4, &f1, &basis));
    let mut out = Matrix::zeros(p, 4);
    for (a, col) in [&f1, &f2, &f3, &f4].into_iter().enumerate() {
        out.set_column(a, col);
    }
    Ok(PerturbedFeatures {
        features: out,
        distance: d,
        raw_distance,
        realized_distance,
    })
}

/// Two features: `f1` and `f1` moved a distance `d` toward the all-ones
/// direction.
pub fn perturb_second_feature(f1: &[f64], d: f64) -> Result<PerturbedFeatures> {
    if !(d >= 0.0) {
        return Err(Error::InvalidConfig(format!("distance must be ≥ 0, got {d}")));
    }
    let p = f1.len();
    let unit = vec![1.0 / libm::sqrt(p as f64); p];
    // f1 ∝ 1 leaves no direction that changes the normalized feature.
    let along = dot(f1, &unit);
    let off: Vec<f64> = f1.iter().map(|&x| x - along * unit[0]).collect();
    if norm(&off) < 1e-12 * norm(f1) {
        return Err(Error::DegenerateFeatures("feature is proportional to all-ones"));
    }
    let dir = sub(&unit, f1);
    let len = norm(&dir);
    let raw: Vec<f64> = (0..p).map(|i| f1[i] + d * dir[i] / len).collect();
    let raw_distance = norm(&sub(&raw, f1));
    let f2 = if d == 0.0 { f1.to_vec() } else { clip_normalize(&raw) };
    let realized_distance = norm(&sub(&f2, f1));
    let mut out = Matrix::zeros(p, 2);
    out.set_column(0, f1);
    out.set_column(1, &f2);
    Ok(PerturbedFeatures {
        features: out,
        distance: d,
        raw_distance,
        realized_distance,
    })
}

/// `k × n` weights with `U(0,1)` entries; column `j` is rescaled to sum to
/// `depths[j]`.
pub fn gen_weights_poisson(k: usize, depths: &[f64], seed_value: u64) -> Result<Matrix> {
    if let Some(&bad) = depths.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidConfig(format!("depths must be positive, got {bad}")));
    }
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::WEIGHTS]));
    let unif = Uniform::new(0.0, 1.0).expect("valid range");
    let mut w = Matrix::from_fn(k, depths.len(), |_, _| unif.sample(&mut rng));
    rescale_columns(&mut w, depths);
    Ok(w)
}

fn rescale_columns(w: &mut Matrix, totals: &[f64]) {
    let sums = w.column_sums();
    let cols = w.cols();
    for (idx, v) in w.as_mut_slice().iter_mut().enumerate() {
        let j = idx % cols;
        *v *= totals[j] / sums[j];
    }
}

/// `k × n` weights with columns drawn from `10 · Dirichlet(1.5, …, 1.5)`.
pub fn gen_weights_dirichlet(k: usize, n: usize, seed_value: u64) -> Matrix {
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::WEIGHTS]));
    let gamma = Gamma::new(DIRICHLET_ALPHA, 1.0).expect("valid gamma");
    let mut w = Matrix::from_fn(k, n, |_, _| gamma.sample(&mut rng).max(f64::MIN_POSITIVE));
    rescale_columns(&mut w, &vec![DIRICHLET_SCALE; n]);
    w
}

/// Sequencing depths from `LogNormal(ln median, sigma)`.
pub fn gen_depths(n: usize, median: f64, sigma: f64, seed_value: u64) -> Result<Vec<f64>> {
    let dist = LogNormal::new(libm::log(median), sigma)
        .map_err(|_| Error::InvalidConfig(format!("bad depth distribution ({median}, {sigma})")))?;
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::DEPTHS]));
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Poisson counts with mean `T·W`.
pub fn gen_poisson_data(t: &Matrix, w: &Matrix, seed_value: u64) -> Result<DataMatrix> {
    let mean = t.matmul(w)?;
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::NOISE]));
    DataMatrix::new(mean.map(|m| draw_poisson(&mut rng, m)))
}

/// Normal draws with mean `T·W` and variance `sigma2`, negatives set to 0.
pub fn gen_normal_data(t: &Matrix, w: &Matrix, sigma2: f64, seed_value: u64) -> Result<DataMatrix> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidConfig(format!("variance must be positive, got {sigma2}")));
    }
    let mean = t.matmul(w)?;
    let sd = libm::sqrt(sigma2);
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::NOISE]));
    DataMatrix::new(mean.map(|m| {
        let z: f64 = Normal::new(m, sd).expect("finite sd").sample(&mut rng);
        z.max(0.0)
    }))
}

/// `len` values evenly spaced from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..len)
            .map(|i| {
                if i == len - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (len - 1) as f64
                }
            })
            .collect(),
    }
}

/// Haar-distributed orthogonal matrix from the QR decomposition of an i.i.d.
/// standard Normal matrix, with the signs of `R`'s diagonal moved into `Q`.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Count data whose mean is not a low-rank product. Each row of the log-mean
/// is an `n`-variate Normal with mean entries drawn from `N(4, 3²)` and
/// covariance `Q·diag(λ)·Qᵀ` (`λ` evenly spaced from 3e-7 to 1, `Q` a random
/// orthogonal basis). Every column of the mean is then rescaled to sum to its
/// depth and the counts are Poisson draws; all-zero rows are removed.
pub fn gen_non_nmf_data(p: usize, depths: &[f64], seed_value: u64) -> Result<DataMatrix> {
    let n = depths.len();
    if p == 0 || n == 0 {
        return Err(Error::InvalidConfig(format!("non-NMF data needs p, n ≥ 1 (got {p}×{n})")));
    }
    let mut rng = seed::rng(seed::derive(&[seed_value, stream::FEATURES]));
    let centre = Normal::new(NON_NMF_LOG_MEAN, NON_NMF_LOG_SD).expect("valid normal");
    let mu = DVector::<f64>::from_fn(n, |_, _| centre.sample(&mut rng));
    let q = random_orthogonal(&mut rng, n);
    let scale = DVector::from_vec(linspace(NON_NMF_MIN_EIGEN, 1.0, n).into_iter().map(libm::sqrt).collect());
    let root = q * DMatrix::from_diagonal(&scale);
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    // Column i of `log_mean` is row i of the log-mean matrix.
    let mut log_mean = root * z;
    for mut col in log_mean.column_iter_mut() {
        col += &mu;
    }
    let mut mean = Matrix::from_fn(p, n, |i, j| log_mean[(j, i)]);
    for j in 0..n {
        let col = mean.column(j);
        let top = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_total = top + libm::log(col.iter().map(|&v| libm::exp(v - top)).sum::<f64>());
        let shift = libm::log(depths[j]) - log_total;
        let shifted: Vec<f64> = col.iter().map(|&v| libm::exp(v + shift)).collect();
        mean.set_column(j, &shifted);
    }
    let mut noise = seed::rng(seed::derive(&[seed_value, stream::NOISE]));
    DataMatrix::new(mean.map(|m| draw_poisson(&mut noise, m)))?.remove_zero_rows()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Family {
    PoissonNmf,
    NormalNmf,
    NonNmf,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DepthSource {
    /// Fixed column sums, one per sample.
    Fixed { depths: Vec<f64> },
    /// `LogNormal(ln median, sigma)`, redrawn per replicate.
    LogNormal { median: f64, sigma: f64 },
}

impl Default for DepthSource {
    fn default() -> Self {
        DepthSource::LogNormal {
            median: 5000.0,
            sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimScenario {
    pub family: Family,
    /// Absent for non-NMF data.
    pub true_rank: Option<usize>,
    pub p: usize,
    pub n: usize,
    /// Feature distance for the perturbed rank-2 and rank-4 Poisson designs.
    pub d: Option<f64>,
    pub depths: DepthSource,
    /// Noise variance of the Normal family.
    pub sigma2: f64,
    pub seed: u64,
}

impl SimScenario {
    pub fn new(family: Family, true_rank: Option<usize>, p: usize, n: usize, seed: u64) -> Self {
        SimScenario {
            family,
            true_rank,
            p,
            n,
            d: None,
            depths: DepthSource::default(),
            sigma2: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::InvalidConfig(String::from("scenario dimensions must be positive")));
        }
        if let Some(d) = self.d {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::InvalidConfig(format!("distance must be ≥ 0, got {d}")));
            }
        }
        match (self.family, self.true_rank) {
            (Family::NonNmf, _) => {}
            (_, None) | (_, Some(0)) => {
                return Err(Error::InvalidConfig(String::from("NMF scenarios need a true rank ≥ 1")))
            }
            (_, Some(k)) if self.d.is_some() && self.family == Family::PoissonNmf && k != 2 && k != 4 => {
                return Err(Error::InvalidConfig(format!("a feature distance needs rank 2 or 4, got {k}")))
            }
            _ => {}
        }
        if let DepthSource::Fixed { depths } = &self.depths {
            if depths.len() != self.n {
                return Err(Error::InvalidConfig(format!(
                    "{} depths given for {} samples",
                    depths.len(),
                    self.n
                )));
            }
        }
        if self.family == Family::NormalNmf && !(self.sigma2 > 0.0) {
            return Err(Error::InvalidConfig(String::from("sigma2 must be positive")));
        }
        Ok(())
    }

    /// The scenario's fixed feature matrix (absent for non-NMF data). Poisson
    /// features have unit column sums; Normal features keep the raw scale.
    pub fn features(&self) -> Result<Option<PerturbedOrBase>> {
        self.validate()?;
        let k = match (self.family, self.true_rank) {
            (Family::NonNmf, _) => return Ok(None),
            (_, Some(k)) => k,
            _ => unreachable!("validated"),
        };
        let fseed = seed::derive(&[self.seed, stream::FEATURES]);
        Ok(Some(match (self.family, self.d, k) {
            (Family::PoissonNmf, Some(d), 2) => {
                let base = gen_base_features(self.p, 1, fseed)?;
                PerturbedOrBase::Perturbed(perturb_second_feature(base.as_slice(), d)?)
            }
            (Family::PoissonNmf, Some(d), 4) => {
                let base = gen_base_features(self.p, 3, fseed)?;
                PerturbedOrBase::Perturbed(perturb_fourth_feature(&base, d)?)
            }
            (Family::NormalNmf, _, _) => PerturbedOrBase::Base(gen_raw_features(self.p, k, fseed)?),
            _ => PerturbedOrBase::Base(gen_base_features(self.p, k, fseed)?),
        }))
    }

    /// Dataset for replicate `r`; fixed features, fresh depths, weights and noise.
    pub fn replicate(&self, features: Option<&Matrix>, r: usize) -> Result<DataMatrix> {
        let rseed = seed::derive(&[self.seed, stream::DATASET, r as u64]);
        let depths = match &self.depths {
            DepthSource::Fixed { depths } => depths.clone(),
            DepthSource::LogNormal { median, sigma } => gen_depths(self.n, *median, *sigma, rseed)?,
        };
        let data = match (self.family, features) {
            (Family::NonNmf, _) => return gen_non_nmf_data(self.p, &depths, rseed),
            (_, None) => return Err(Error::InvalidConfig(String::from("NMF scenario without features"))),
            (Family::PoissonNmf, Some(t)) => {
                let w = gen_weights_poisson(t.cols(), &depths, rseed)?;
                gen_poisson_data(t, &w, rseed)?
            }
            (Family::NormalNmf, Some(t)) => {
                let w = gen_weights_dirichlet(t.cols(), self.n, rseed);
                gen_normal_data(t, &w, self.sigma2, rseed)?
            }
        };
        data.remove_zero_rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbedOrBase {
    Base(Matrix),
    Perturbed(PerturbedFeatures),
}

impl PerturbedOrBase {
    pub fn matrix(&self) -> &Matrix {
        match self {
            PerturbedOrBase::Base(m) => m,
            PerturbedOrBase::Perturbed(p) => &p.features,
        }
    }

    pub fn realized_distance(&self) -> Option<f64> {
        match self {
            PerturbedOrBase::Base(_) => None,
            PerturbedOrBase::Perturbed(p) => Some(p.realized_distance),
        }
    }
}

/// One selection made in a simulation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioRow {
    pub replicate: usize,
    pub method: String,
    pub selected_rank: usize,
    pub capped: bool,
    pub data_digest: u64,
}

/// One replicate's dataset and the report of every method on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRun {
    pub replicate: usize,
    pub data: DataMatrix,
    pub reports: Vec<RankReport>,
}

/// Runs every method on every replicate. All methods see the same dataset for
/// a replicate; each method's seed is combined with the replicate index.
/// `on_replicate` sees each finished replicate in order.
pub fn run_replicates<E: Executor>(
    scenario: &SimScenario,
    features: Option<&Matrix>,
    methods: &[SelectionConfig],
    replicates: usize,
    rt: &Runtime<'_, E>,
    on_replicate: &mut dyn FnMut(ReplicateRun),
) -> Result<()> {
    for r in 0..replicates {
        let data = scenario.replicate(features, r).map_err(|e| Error::in_replicate(r, e))?;
        let mut reports = Vec::with_capacity(methods.len());
        for config in methods {
            let mut cfg = config.clone();
            cfg.seed = seed::derive(&[config.seed, r as u64]);
            reports.push(select_rank(&data, &cfg, rt).map_err(|e| Error::in_replicate(r, e))?);
        }
        on_replicate(ReplicateRun {
            replicate: r,
            data,
            reports,
        });
    }
    Ok(())
}

impl ScenarioRow {
    pub fn from_run(run: &ReplicateRun) -> Vec<ScenarioRow> {
        let digest = run.data.digest();
        run.reports
            .iter()
            .map(|report| ScenarioRow {
                replicate: run.replicate,
                method: String::from(report.method.as_str()),
                selected_rank: report.selected_rank,
                capped: report.capped,
                data_digest: digest,
            })
            .collect()
    }
}

/// [`run_replicates`] reduced to one row per (replicate, method).
pub fn run_scenario<E: Executor>(
    scenario: &SimScenario,
    methods: &[SelectionConfig],
    replicates: usize,
    rt: &Runtime<'_, E>,
) -> Result<Vec<ScenarioRow>> {
    let features = scenario.features()?;
    let mut rows = Vec::with_capacity(methods.len() * replicates);
    run_replicates(scenario, features.as_ref().map(|f| f.matrix()), methods, replicates, rt, &mut |run| {
        rows.extend(ScenarioRow::from_run(&run))
    })?;
    Ok(rows)
}

/// Per-method aggregate in the shape of a simulation table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    /// Replicates that selected the true rank (0 without a true rank).
    pub correct: usize,
    pub capped: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Summaries in first-appearance order of the methods.
pub fn summarize(rows: &[ScenarioRow], true_rank: Option<usize>) -> Vec<MethodSummary> {
    let mut names: Vec<&str> = Vec::new();
    for row in rows {
        if !names.contains(&row.method.as_str()) {
            names.push(&row.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&ScenarioRow> = rows.iter().filter(|r| r.method == name).collect();
            let ranks: Vec<f64> = mine.iter().map(|r| r.selected_rank as f64).collect();
            MethodSummary {
                method: String::from(name),
                replicates: mine.len(),
                correct: mine.iter().filter(|r| Some(r.selected_rank) == true_rank).count(),
                capped: mine.iter().filter(|r| r.capped).count(),
                mean: stats::mean(&ranks),
                sd: if ranks.len() > 1 { stats::sd(&ranks) } else { 0.0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_have_unit_columns() {
        let f = gen_base_features(50, 4, 3).unwrap();
        for s in f.column_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(f.rows() <= 50);
        assert!((0..f.rows()).all(|i| f.row(i).iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn sparse_gamma_moments() {
        let mut rng = seed::rng(17);
        let raw = sparse_gamma_matrix(&mut rng, 100, 100);
        let zeros = raw.as_slice().iter().filter(|&&v| v == 0.0).count() as f64;
        // Binomial(10⁴, 0.3): sd ≈ 45.8.
        assert!((zeros - 3000.0).abs() < 4.0 * 45.83, "zeros {zeros}");
        let nonzero: Vec<f64> = raw.as_slice().iter().cloned().filter(|&v| v > 0.0).collect();
        assert!((stats::mean(&nonzero) - 1.5).abs() < 0.1);
    }

    #[test]
    fn fourth_feature_geometry() {
        let base = gen_base_features(40, 3, 8).unwrap();
        let at0 = perturb_fourth_feature(&base, 0.0).unwrap();
        for i in 0..base.rows() {
            let c = (base[(i, 0)] + base[(i, 1)] + base[(i, 2)]) / 3.0;
            assert_eq!(at0.features[(i, 3)], c);
        }
        assert!(at0.realized_distance < 1e-12);

        let d = 0.01;
        let pert = perturb_fourth_feature(&base, d).unwrap();
        assert!((pert.raw_distance - d).abs() < 1e-10);
        let f = &pert.features;
        for s in f.column_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(pert.realized_distance > 0.0);
    }

    #[test]
    fn fourth_feature_direction_is_perpendicular() {
        let base = gen_base_features(30, 3, 2).unwrap();
        let p = base.rows();
        let (f1, f2, f3) = (base.column(0), base.column(1), base.column(2));
        let basis = orthonormal_basis(&[sub(&f2, &f1), sub(&f3, &f1)]).unwrap();
        let unit = vec![1.0 / libm::sqrt(p as f64); p];
        let u = plane_residual(&unit, &vec![0.0; p], &basis);
        assert!(dot(&u, &sub(&f2, &f1)).abs() < 1e-10);
        assert!(dot(&u, &sub(&f3, &f1)).abs() < 1e-10);
    }

    #[test]
    fn degenerate_plane_is_rejected() {
        let m = Matrix::from_rows(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]);
        assert!(matches!(perturb_fourth_feature(&m, 0.1), Err(Error::DegenerateFeatures(_))));
    }

    #[test]
    fn second_feature_distance() {
        let f1 = gen_base_features(40, 1, 5).unwrap().into_vec();
        let same = perturb_second_feature(&f1, 0.0).unwrap();
        assert_eq!(same.features.column(0), same.features.column(1));
        let near = perturb_second_feature(&f1, 0.0005).unwrap();
        let far = perturb_second_feature(&f1, 0.002).unwrap();
        assert!((far.raw_distance - 0.002).abs() < 1e-12);
        assert!(near.realized_distance < far.realized_distance);
        let flat = vec![0.25; 4];
        assert!(perturb_second_feature(&flat, 0.1).is_err());
    }

    #[test]
    fn weights_match_depths() {
        let depths = gen_depths(25, 5000.0, 0.3, 1).unwrap();
        assert!(depths.iter().all(|&d| d > 0.0));
        let w = gen_weights_poisson(3, &depths, 4).unwrap();
        for (s, d) in w.column_sums().iter().zip(&depths) {
            assert!((s - d).abs() < 1e-9);
        }
        assert!(w.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dirichlet_weights() {
        let w = gen_weights_dirichlet(1, 7, 3);
        assert!(w.as_slice().iter().all(|&v| v == 10.0));
        let k = 4;
        let n = 10_000;
        let w = gen_weights_dirichlet(k, n, 9);
        for s in w.column_sums() {
            assert!((s - 10.0).abs() < 1e-9);
        }
        // Var of 10·Dir(1.5,…) coordinate: 100·(a(A−a))/(A²(A+1)), A = 1.5k.
        let (a, total) = (DIRICHLET_ALPHA, DIRICHLET_ALPHA * k as f64);
        let var = 100.0 * a * (total - a) / (total * total * (total + 1.0));
        let se = libm::sqrt(var / n as f64);
        for row in 0..k {
            let m = stats::mean(w.row(row));
            assert!((m - 10.0 / k as f64).abs() < 3.0 * se, "row {row}: {m}");
        }
    }

    #[test]
    fn poisson_and_normal_noise() {
        let t = Matrix::from_rows(&[[1.0], [0.0]]);
        let w = Matrix::from_rows(&[[50.0; 200]]);
        let x = gen_poisson_data(&t, &w, 2).unwrap();
        assert!(x.values().row(1).iter().all(|&v| v == 0.0));
        assert!(x.values().row(0).iter().all(|&v| v.fract() == 0.0));
        let se = libm::sqrt(50.0 / 200.0);
        assert!((stats::mean(x.values().row(0)) - 50.0).abs() < 4.0 * se);

        let t = Matrix::from_rows(&[[1.0], [0.0]]);
        let w = Matrix::from_rows(&[[10.0; 2000]]);
        let y = gen_normal_data(&t, &w, 1.0, 3).unwrap();
        assert!(y.values().row(0).iter().all(|&v| v > 0.0));
        let zeros = y.values().row(1).iter().filter(|&&v| v == 0.0).count() as f64;
        assert!((zeros - 1000.0).abs() < 4.0 * libm::sqrt(500.0));
        assert_eq!(y, gen_normal_data(&t, &w, 1.0, 3).unwrap());
    }

    #[test]
    fn eigenvalues_evenly_spaced() {
        let e = linspace(NON_NMF_MIN_EIGEN, 1.0, 30);
        assert_eq!(e[0], 3e-7);
        assert_eq!(e[29], 1.0);
        let step = (1.0 - 3e-7) / 29.0;
        for pair in e.windows(2) {
            assert!((pair[1] - pair[0] - step).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_basis_is_orthogonal() {
        let mut rng = seed::rng(4);
        let q = random_orthogonal(&mut rng, 12);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::<f64>::identity(12, 12)).abs().max() < 1e-12);
    }

    #[test]
    fn non_nmf_counts() {
        let depths = gen_depths(30, 5000.0, 0.3, 6).unwrap();
        let x = gen_non_nmf_data(40, &depths, 6).unwrap();
        assert!(x.values().as_slice().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        assert_eq!(x.n(), 30);
        assert_eq!(x, gen_non_nmf_data(40, &depths, 6).unwrap());
    }

    #[test]
    fn scenario_replicates_share_features() {
        let mut s = SimScenario::new(Family::PoissonNmf, Some(2), 30, 20, 11);
        s.d = Some(0.05);
        let f = s.features().unwrap().unwrap();
        assert!(f.realized_distance().unwrap() > 0.0);
        let a = s.replicate(Some(f.matrix()), 0).unwrap();
        let b = s.replicate(Some(f.matrix()), 1).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a, s.replicate(Some(f.matrix()), 0).unwrap());
        s.true_rank = Some(3);
        assert!(s.validate().is_err());
    }
}
