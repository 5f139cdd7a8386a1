//! Rank selection for non-negative matrix factorization.
//!
//! The rank of an NMF model `X ≈ T·W` is chosen by testing `H0: rank = k`
//! against `rank ≥ k+1` with a likelihood-ratio statistic, moving up one rank
//! at a time until the null is no longer rejected. The null distribution of
//! the statistic comes from a parametric bootstrap. Because multiplicative
//! NMF updates routinely stop in local optima, single-start bootstrap
//! statistics carry an additive optimization error; the deconvolved test
//! estimates that error from a pure-error sample and removes it with a
//! penalized maximum-likelihood deconvolution before computing p-values.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the command line
//! and thread pools live in the `nmfrank` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bootstrap;
pub mod data;
pub mod decon;
pub mod error;
pub mod exec;
pub mod likelihood;
pub mod matrix;
pub mod nmf;
pub mod seed;
pub mod select;
pub mod sim;
pub mod stats;

pub use bootstrap::{ErrorSample, LrSample, NullModel};
pub use data::{DataMatrix, ModelFamily, ModelKind, Method, SelectionConfig, VARIANCE_FLOOR};
pub use decon::{DeconDensity, DeconOptions, PenaltyChoice};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use likelihood::LrStatistic;
pub use matrix::Matrix;
pub use nmf::{fit_nmf, fit_nmf_from, fit_nmf_masked, multi_start_fit, Factorization, FitOptions, Mask, MultiStartResult};
pub use select::{Decision, RankReport, RankStep, Runtime};
pub use sim::{Family, SimScenario};

