//! Simulation scenario files.
//!
//! Scenarios are TOML key-value files:
//!
//! ```toml
//! family = "poisson_nmf"     # poisson_nmf | normal_nmf | non_nmf
//! true_rank = 2              # omitted for non_nmf
//! p = 60
//! n = 40
//! d = 0.1                    # optional; Poisson ranks 2 and 4 only
//! sigma2 = 1.0               # normal_nmf noise variance
//! seed = 7                   # drives features, weights and noise
//!
//! [depths]                   # optional; default log-normal(ln 5000, 0.3)
//! kind = "log_normal"        # or kind = "fixed", depths = [...]
//! median = 5000.0
//! sigma = 0.3
//!
//! [selection]                # all optional
//! alpha = 0.1
//! bootstrap = 30
//! starts = 20
//! k_start = 1
//! k_max = 6
//! seed = 1
//! penalty = 1.0              # or "cv"
//! mask_fraction = 0.3
//! repeats = 10
//! k_grid = [1, 2, 3]
//! ```

use std::path::Path;

use nmfrank_core::decon::PenaltyChoice;
use nmfrank_core::sim::{DepthSource, Family, SimScenario};
use nmfrank_core::{Method, ModelKind, SelectionConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PenaltySpec {
    Fixed(f64),
    Named(String),
}

impl PenaltySpec {
    pub fn choice(&self) -> Result<PenaltyChoice, CliError> {
        match self {
            PenaltySpec::Fixed(v) => Ok(PenaltyChoice::Fixed(*v)),
            PenaltySpec::Named(s) => parse_penalty(s),
        }
    }
}

pub fn parse_penalty(s: &str) -> Result<PenaltyChoice, CliError> {
    if s.eq_ignore_ascii_case("cv") {
        return Ok(PenaltyChoice::CrossValidated);
    }
    s.parse::<f64>()
        .map(PenaltyChoice::Fixed)
        .map_err(|_| CliError::Usage(format!("penalty must be a number or \"cv\", got {s:?}")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub alpha: Option<f64>,
    pub bootstrap: Option<usize>,
    pub starts: Option<usize>,
    pub k_start: Option<usize>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
    pub penalty: Option<PenaltySpec>,
    pub mask_fraction: Option<f64>,
    pub repeats: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub max_iter: Option<usize>,
    pub rel_tol: Option<f64>,
}

impl SelectionSpec {
    pub fn config(&self, model: ModelKind, method: Method) -> Result<SelectionConfig, CliError> {
        let mut c = SelectionConfig::new(model, method);
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.bootstrap {
            c.bootstrap = v;
        }
        if let Some(v) = self.starts {
            c.starts = v;
        }
        if let Some(v) = self.k_start {
            c.k_start = v;
        }
        c.k_max = self.k_max;
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(p) = &self.penalty {
            c.decon.penalty = p.choice()?;
        }
        if let Some(v) = self.mask_fraction {
            c.impute.mask_fraction = v;
        }
        if let Some(v) = self.repeats {
            c.impute.repeats = v;
        }
        c.impute.k_grid = self.k_grid.clone();
        if let Some(v) = self.max_iter {
            c.fit.max_iter = v;
        }
        if let Some(v) = self.rel_tol {
            c.fit.rel_tol = v;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub family: Family,
    pub true_rank: Option<usize>,
    pub p: usize,
    pub n: usize,
    pub d: Option<f64>,
    pub sigma2: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub depths: Option<DepthSource>,
    #[serde(default)]
    pub selection: SelectionSpec,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Usage(format!("scenario file: {e}")))?;
        file.scenario()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Result<SimScenario, CliError> {
        let mut s = SimScenario::new(self.family, self.true_rank, self.p, self.n, self.seed);
        s.d = self.d;
        if let Some(v) = self.sigma2 {
            s.sigma2 = v;
        }
        if let Some(d) = &self.depths {
            s.depths = d.clone();
        }
        s.validate().map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
        Ok(s)
    }

    pub fn model(&self) -> ModelKind {
        match self.family {
            Family::NormalNmf => ModelKind::Gaussian,
            Family::PoissonNmf | Family::NonNmf => ModelKind::Poisson,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
family = "poisson_nmf"
true_rank = 2
p = 60
n = 40
d = 0.1
seed = 7

[depths]
kind = "log_normal"
median = 5000.0
sigma = 0.3

[selection]
bootstrap = 30
starts = 20
penalty = "cv"
k_grid = [1, 2, 3]
"#;
        let f = ScenarioFile::parse(text).unwrap();
        assert_eq!(f.true_rank, Some(2));
        let c = f.selection.config(f.model(), Method::DeconBoot).unwrap();
        assert_eq!((c.bootstrap, c.starts), (30, 20));
        assert_eq!(c.decon.penalty, PenaltyChoice::CrossValidated);
        assert_eq!(c.impute.k_grid, Some(vec![1, 2, 3]));
    }

    #[test]
    fn fixed_depths_and_numeric_penalty() {
        let text = "family = \"normal_nmf\"\ntrue_rank = 3\np = 10\nn = 2\n[depths]\nkind = \"fixed\"\ndepths = [10.0, 20.0]\n[selection]\npenalty = 10\n";
        let f = ScenarioFile::parse(text).unwrap();
        assert_eq!(f.model(), ModelKind::Gaussian);
        let c = f.selection.config(f.model(), Method::Boot).unwrap();
        assert_eq!(c.decon.penalty, PenaltyChoice::Fixed(10.0));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ScenarioFile::parse("family = \"poisson_nmf\"\np = 10\nn = 5\n").is_err());
        assert!(ScenarioFile::parse("family = \"nope\"\np = 10\nn = 5\n").is_err());
        assert!(ScenarioFile::parse("family = \"non_nmf\"\np = 10\nn = 5\nbogus = 1\n").is_err());
        let err = ScenarioFile::parse("family = \"poisson_nmf\"\ntrue_rank = 3\nd = 0.1\np = 10\nn = 5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
