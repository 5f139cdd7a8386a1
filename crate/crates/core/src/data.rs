//! Domain types shared across the crate: the observed matrix, the model
//! family and the rank-selection configuration.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::decon::DeconOptions;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nmf::FitOptions;

/// Lower bound on any Gaussian variance used for likelihoods or sampling.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Tolerance for treating a stored real as an integer count.
pub const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RemovedRow {
    /// 0-based index in the matrix as loaded.
    pub index: usize,
    pub label: Option<String>,
}

/// Non-negative `p × n` observation matrix (rows are variables, columns are
/// observations).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Matrix,
    row_labels: Option<Vec<String>>,
    col_labels: Option<Vec<String>>,
    removed_rows: Vec<RemovedRow>,
}

impl DataMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        let (p, n) = values.shape();
        if p == 0 || n == 0 {
            return Err(Error::EmptyMatrix { rows: p, cols: n });
        }
        for i in 0..p {
            for (j, &v) in values.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry { row: i + 1, col: j + 1 });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i + 1,
                        col: j + 1,
                        value: v,
                    });
                }
            }
        }
        Ok(DataMatrix {
            values,
            row_labels: None,
            col_labels: None,
            removed_rows: Vec::new(),
        })
    }

    pub fn with_labels(
        mut self,
        row_labels: Option<Vec<String>>,
        col_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(r) = &row_labels {
            if r.len() != self.p() {
                return Err(Error::ShapeMismatch {
                    expected_rows: self.p(),
                    expected_cols: 1,
                    rows: r.len(),
                    cols: 1,
                });
            }
        }
        if let Some(c) = &col_labels {
            if c.len() != self.n() {
                return Err(Error::ShapeMismatch {
                    expected_rows: 1,
                    expected_cols: self.n(),
                    rows: 1,
                    cols: c.len(),
                });
            }
        }
        self.row_labels = row_labels;
        self.col_labels = col_labels;
        Ok(self)
    }

    /// Drops all-zero rows, recording which ones went.
    pub fn remove_zero_rows(mut self) -> Result<Self> {
        let zero: Vec<bool> = (0..self.p())
            .map(|i| self.values.row(i).iter().all(|&v| v == 0.0))
            .collect();
        if !zero.iter().any(|&z| z) {
            return Ok(self);
        }
        // Indices are relative to the matrix as originally loaded.
        let mut surviving_original: Vec<usize> = (0..self.p() + self.removed_rows.len()).collect();
        for r in &self.removed_rows {
            surviving_original.retain(|&i| i != r.index);
        }
        for (i, _) in zero.iter().enumerate().filter(|(_, &z)| z) {
            self.removed_rows.push(RemovedRow {
                index: surviving_original[i],
                label: self.row_labels.as_ref().map(|l| l[i].clone()),
            });
        }
        self.removed_rows.sort_by_key(|r| r.index);
        let values = self.values.select_rows(|i| !zero[i]);
        if values.rows() == 0 {
            return Err(Error::EmptyMatrix {
                rows: 0,
                cols: values.cols(),
            });
        }
        self.values = values;
        if let Some(labels) = self.row_labels.take() {
            self.row_labels = Some(
                labels
                    .into_iter()
                    .zip(&zero)
                    .filter(|(_, &z)| !z)
                    .map(|(l, _)| l)
                    .collect(),
            );
        }
        Ok(self)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn col_labels(&self) -> Option<&[String]> {
        self.col_labels.as_deref()
    }

    pub fn removed_rows(&self) -> &[RemovedRow] {
        &self.removed_rows
    }

    /// Errors unless every entry is an integer within [`INTEGRALITY_TOL`].
    pub fn check_counts(&self) -> Result<()> {
        check_counts(&self.values)
    }

    /// Stable 64-bit digest of the values (not cryptographic).
    pub fn digest(&self) -> u64 {
        let (p, n) = self.values.shape();
        self.values
            .as_slice()
            .iter()
            .fold(crate::seed::derive(&[p as u64, n as u64]), |acc, v| {
                crate::seed::splitmix64(acc ^ v.to_bits())
            })
    }
}

pub(crate) fn check_counts(values: &Matrix) -> Result<()> {
    for i in 0..values.rows() {
        for (j, &v) in values.row(i).iter().enumerate() {
            if libm::fabs(v - libm::round(v)) > INTEGRALITY_TOL {
                return Err(Error::NonIntegerCount {
                    row: i + 1,
                    col: j + 1,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ModelKind {
    Poisson,
    Gaussian,
}

/// Distribution of the entries of `X` given the mean `T·W`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum ModelFamily {
    Poisson,
    /// Common per-entry variance.
    Gaussian { variance: f64 },
}

impl ModelFamily {
    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance >= VARIANCE_FLOOR) || !variance.is_finite() {
            return Err(Error::VarianceBelowFloor(variance));
        }
        Ok(ModelFamily::Gaussian { variance })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelFamily::Poisson => ModelKind::Poisson,
            ModelFamily::Gaussian { .. } => ModelKind::Gaussian,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            ModelFamily::Poisson => None,
            ModelFamily::Gaussian { variance } => Some(*variance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    /// Bootstrap test with best-of-m fits on every bootstrap dataset.
    Boot,
    /// Single-start bootstrap with the optimization error deconvolved out.
    DeconBoot,
    /// Masked-entry imputation cross-validation.
    ImputeCv,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Boot => "boot",
            Method::DeconBoot => "decon",
            Method::ImputeCv => "impute",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImputeSettings {
    pub mask_fraction: f64,
    pub repeats: usize,
    /// Ranks to score; `None` means `1..=k_max`.
    pub k_grid: Option<Vec<usize>>,
}

impl Default for ImputeSettings {
    fn default() -> Self {
        ImputeSettings {
            mask_fraction: 0.3,
            repeats: 10,
            k_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionConfig {
    pub model: ModelKind,
    pub method: Method,
    pub alpha: f64,
    /// Bootstrap size `B`.
    pub bootstrap: usize,
    /// Starts per NMF fit `m`.
    pub starts: usize,
    pub k_start: usize,
    /// Filled in (and clamped) by [`validate`].
    pub k_max: Option<usize>,
    pub seed: u64,
    pub fit: FitOptions,
    pub decon: DeconOptions,
    pub impute: ImputeSettings,
}

impl SelectionConfig {
    pub fn new(model: ModelKind, method: Method) -> Self {
        SelectionConfig {
            model,
            method,
            alpha: 0.1,
            bootstrap: 50,
            starts: 50,
            k_start: 1,
            k_max: None,
            seed: 0,
            fit: FitOptions::default(),
            decon: DeconOptions::default(),
            impute: ImputeSettings::default(),
        }
    }

    /// `k_max` after validation.
    pub fn cap(&self) -> usize {
        self.k_max.unwrap_or(self.k_start)
    }
}

/// Largest admissible tested rank: `floor(np / (n + p)) - 1`.
pub fn rank_cap(p: usize, n: usize) -> usize {
    ((n * p) / (n + p)).saturating_sub(1)
}

/// Fills defaults, clamps `k_max` to [`rank_cap`] and rejects inconsistent
/// settings.
pub fn validate(config: &SelectionConfig, data: &DataMatrix) -> Result<SelectionConfig> {
    let mut c = config.clone();
    if !(c.alpha > 0.0 && c.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0,1), got {}",
            c.alpha
        )));
    }
    if c.method != Method::ImputeCv && c.bootstrap < 10 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap size must be at least 10, got {}",
            c.bootstrap
        )));
    }
    if c.starts < 1 {
        return Err(Error::InvalidConfig("starts must be at least 1".into()));
    }
    if c.method == Method::DeconBoot && c.starts < 2 {
        return Err(Error::InvalidConfig(
            "the deconvolved test needs at least 2 starts for its error sample".into(),
        ));
    }
    if c.k_start < 1 {
        return Err(Error::InvalidConfig("k_start must be at least 1".into()));
    }
    c.fit.validate()?;
    c.decon.validate()?;
    if c.method == Method::ImputeCv {
        let s = &c.impute;
        if !(s.mask_fraction > 0.0 && s.mask_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask fraction must lie in (0,1), got {}",
                s.mask_fraction
            )));
        }
        if s.repeats < 1 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if let Some(grid) = &s.k_grid {
            let max = data.p().min(data.n());
            if grid.is_empty() || grid.iter().any(|&k| k < 1 || k > max) {
                return Err(Error::InvalidConfig(format!(
                    "k_grid must be non-empty with ranks in 1..={max}"
                )));
            }
        }
    }
    let cap = rank_cap(data.p(), data.n());
    let k_max = c.k_max.map_or(cap, |k| k.min(cap));
    if c.k_start > k_max {
        return Err(Error::InvalidConfig(format!(
            "k_start {} exceeds k_max {} (cap for {}x{} data is {})",
            c.k_start,
            k_max,
            data.p(),
            data.n(),
            cap
        )));
    }
    c.k_max = Some(k_max);
    Ok(c)
}
