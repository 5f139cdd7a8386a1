//! Per-rank CSV exports of the bootstrap statistics, the error sample and the
//! deconvolved null density.

use std::path::{Path, PathBuf};

use nmfrank_core::select::StepArtifacts;

use crate::io::write_columns;
use crate::CliError;

/// Points on each exported density curve.
pub const DENSITY_POINTS: usize = 512;

/// Writes `lambda_k{k}.csv`, and for deconvolved steps `errors_k{k}.csv` and
/// `density_k{k}.csv` (columns `x,f`). Returns the written paths.
pub fn export_step(dir: &Path, step: &StepArtifacts) -> Result<Vec<PathBuf>, CliError> {
    let k = step.k;
    let mut written = Vec::new();
    let path = dir.join(format!("lambda_k{k}.csv"));
    write_columns(&path, &["lambda"], &[&step.lr_sample.values])?;
    written.push(path);
    if let Some(errors) = &step.error_sample {
        let path = dir.join(format!("errors_k{k}.csv"));
        write_columns(&path, &["e"], &[&errors.additive_errors()])?;
        written.push(path);
    }
    if let Some(density) = &step.density {
        let (xs, fs): (Vec<f64>, Vec<f64>) = density.evaluate(DENSITY_POINTS).into_iter().unzip();
        let path = dir.join(format!("density_k{k}.csv"));
        write_columns(&path, &["x", "f"], &[&xs, &fs])?;
        written.push(path);
    }
    Ok(written)
}
