use alloc::string::String;

/// Errors raised by the numerical core.
///
/// Row and column positions are 1-based so they can be shown to users as-is.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is empty ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("negative entry {value} at ({row},{col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("non-finite entry at ({row},{col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("count at ({row},{col}) is not an integer: {value}")]
    NonIntegerCount { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("rank {k} out of range (1..={max})")]
    RankOutOfRange { k: usize, max: usize },
    #[error("variance {0} is below the floor")]
    VarianceBelowFloor(f64),
    #[error("cannot average an empty list of variances")]
    EmptyVarianceList,
    #[error("non-finite log-likelihood")]
    NonFiniteLoglik,
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("start {start}: {source}")]
    InStart {
        start: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("replicate {replicate}: {source}")]
    InReplicate {
        replicate: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("mask leaves row {0} without observed entries")]
    MaskedRow(usize),
    #[error("mask leaves column {0} without observed entries")]
    MaskedColumn(usize),
    #[error("could not draw a mask with observed entries in every row and column")]
    MaskRedrawExhausted,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty sample")]
    EmptySample,
    #[error("degenerate deconvolution grid: every contaminated value minus error is equal")]
    DegenerateGrid,
    #[error("feature construction is degenerate: {0}")]
    DegenerateFeatures(&'static str),
}

impl Error {
    pub(crate) fn in_start(start: usize, source: Error) -> Self {
        Error::InStart {
            start,
            source: alloc::boxed::Box::new(source),
        }
    }

    pub(crate) fn in_replicate(replicate: usize, source: Error) -> Self {
        Error::InReplicate {
            replicate,
            source: alloc::boxed::Box::new(source),
        }
    }

    /// Strips start/replicate annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStart { source, .. } | Error::InReplicate { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the optimizer rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFiniteLoglik
                | Error::NonFiniteObjective { .. }
                | Error::DegenerateGrid
                | Error::DegenerateFeatures(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
