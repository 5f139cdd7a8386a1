//! `nmfrank fit | select-rank | simulate`.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nmfrank_core::nmf::multi_start_fit;
use nmfrank_core::select::{select_rank, Runtime};
use nmfrank_core::sim::{run_replicates, summarize, ScenarioRow};
use nmfrank_core::{DataMatrix, Method, ModelKind, RankStep, SelectionConfig};
use serde::Serialize;

use crate::report::{ReportDocument, RunManifest, StepTiming};
use crate::scenario::{parse_penalty, ScenarioFile};
use crate::{io, CliError, Pool};

#[derive(Debug, Parser)]
#[command(name = "nmfrank", version, about = "NMF rank selection by bootstrap likelihood-ratio tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a rank-K factorization and write T.csv, W.csv and fit.json.
    Fit(FitArgs),
    /// Select the rank sequentially and write report.json.
    SelectRank(SelectArgs),
    /// Generate scenario replicates and run rank selection on each.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Poisson,
    Gaussian,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Poisson => ModelKind::Poisson,
            ModelArg::Gaussian => ModelKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Boot,
    Decon,
    Impute,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Boot => Method::Boot,
            MethodArg::Decon => Method::DeconBoot,
            MethodArg::Impute => Method::ImputeCv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed.
    #[arg(long, env = "NMFRANK_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitOpts {
    /// Iteration limit per NMF run.
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    #[command(flatten)]
    pub fit: FitOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Bootstrap datasets per tested rank.
    #[arg(long, default_value_t = 50)]
    pub bootstrap: usize,
    /// NMF starts per fit.
    #[arg(long, default_value_t = 50)]
    pub starts: usize,
    #[arg(long, default_value_t = 1)]
    pub k_start: usize,
    /// Largest rank to test (clamped to floor(np/(n+p)) - 1).
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Deconvolution smoothness penalty, or "cv" to cross-validate it.
    #[arg(long, default_value = "1")]
    pub penalty: String,
    /// Fraction of entries hidden per imputation repeat.
    #[arg(long, default_value_t = 0.3)]
    pub mask_fraction: f64,
    /// Imputation repeats.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Ranks scored by imputation (default 1..=k_max).
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Write per-rank bootstrap samples and null densities here.
    #[arg(long)]
    pub export_densities: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Comma-separated list of boot, decon, impute.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "decon,impute")]
    pub methods: Vec<MethodArg>,
    #[command(flatten)]
    pub common: Common,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Messages go to stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::SelectRank(a) => cmd_select_rank(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn pool(common: &Common) -> Result<Pool, CliError> {
    if common.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    Pool::new(common.threads).map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn out_dir(common: &Common) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    Ok(&common.out)
}

fn load_input(path: &Path) -> Result<DataMatrix, CliError> {
    Ok(io::read_matrix(path)?.remove_zero_rows()?)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    schema: u32,
    model: ModelKind,
    rank: usize,
    loglik: f64,
    /// KL divergence (Poisson) or squared error (Gaussian) of the best start.
    divergence: f64,
    variance: Option<f64>,
    iterations: usize,
    converged: bool,
    best_start: usize,
    start_logliks: &'a [f64],
    removed_zero_rows: &'a [nmfrank_core::data::RemovedRow],
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let seed = a.common.seed.unwrap_or(0);
    let exec = pool(&a.common)?;
    let config = serde_json::json!({
        "input": a.input, "rank": a.rank, "model": ModelKind::from(a.model), "starts": a.starts,
        "max_iter": a.fit.max_iter, "tol": a.fit.tol,
    });
    let mut manifest = RunManifest::start("fit", seed, exec.threads(), config);
    let x = load_input(&a.input)?;
    manifest.input = Some(crate::report::FileDigest::of(&a.input)?);
    if a.starts == 0 {
        return Err(CliError::Usage("--starts must be at least 1".into()));
    }
    let opts = fit_options(&a.fit);
    opts.validate()?;
    let fit = multi_start_fit(&x, a.rank, a.model.into(), a.starts, seed, &opts, &exec)?;
    let best = &fit.best;

    let out = out_dir(&a.common)?;
    let factors: Vec<String> = (1..=a.rank).map(|i| format!("f{i}")).collect();
    let t_path = out.join("T.csv");
    io::write_matrix(&t_path, &best.t, x.row_labels(), Some(&factors))?;
    let w_path = out.join("W.csv");
    io::write_matrix(&w_path, &best.w, Some(&factors), x.col_labels())?;
    let summary = FitSummary {
        schema: crate::report::SCHEMA,
        model: best.model.kind(),
        rank: a.rank,
        loglik: best.loglik,
        divergence: best.objective,
        variance: best.model.variance(),
        iterations: best.iterations,
        converged: best.converged,
        best_start: fit.best_start,
        start_logliks: &fit.all_logliks,
        removed_zero_rows: x.removed_rows(),
    };
    let s_path = out.join("fit.json");
    io::write_text(&s_path, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    for p in [&t_path, &w_path, &s_path] {
        manifest.add_output(p)?;
    }
    manifest.finish(out)?;
    Ok(())
}

fn fit_options(f: &FitOpts) -> nmfrank_core::FitOptions {
    nmfrank_core::FitOptions {
        max_iter: f.max_iter,
        rel_tol: f.tol,
        ..Default::default()
    }
}

fn selection_config(a: &SelectArgs, seed: u64) -> Result<SelectionConfig, CliError> {
    let mut c = SelectionConfig::new(a.model.into(), a.method.into());
    c.alpha = a.alpha;
    c.bootstrap = a.bootstrap;
    c.starts = a.starts;
    c.k_start = a.k_start;
    c.k_max = a.k_max;
    c.seed = seed;
    c.fit = fit_options(&a.fit);
    c.decon.penalty = parse_penalty(&a.penalty)?;
    c.impute.mask_fraction = a.mask_fraction;
    c.impute.repeats = a.repeats;
    c.impute.k_grid = a.k_grid.clone();
    Ok(c)
}

pub fn cmd_select_rank(a: &SelectArgs) -> Result<(), CliError> {
    let seed = a.common.seed.unwrap_or(0);
    let exec = pool(&a.common)?;
    let config = selection_config(a, seed)?;
    let mut manifest = RunManifest::start(
        "select-rank",
        seed,
        exec.threads(),
        serde_json::to_value(&config).expect("config serializes"),
    );
    let x = load_input(&a.input)?;
    manifest.input = Some(crate::report::FileDigest::of(&a.input)?);

    let timings = RefCell::new(Vec::new());
    let clock = RefCell::new(Instant::now());
    let observer = |step: &RankStep| {
        let mut last = clock.borrow_mut();
        timings.borrow_mut().push(StepTiming {
            k: step.k,
            seconds: last.elapsed().as_secs_f64(),
        });
        *last = Instant::now();
    };
    let rt = Runtime {
        exec: &exec,
        observer: Some(&observer),
        keep_artifacts: a.export_densities.is_some(),
    };
    let report = select_rank(&x, &config, &rt)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let out = out_dir(&a.common)?;
    let path = out.join("report.json");
    io::write_text(&path, &ReportDocument::new(&report, x.removed_rows()).to_json())?;
    manifest.add_output(&path)?;
    if let Some(dir) = &a.export_densities {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for step in &report.artifacts {
            for p in crate::export::export_step(dir, step)? {
                manifest.add_output(&p)?;
            }
        }
    }
    manifest.step_timings = timings.into_inner();
    manifest.finish(out)?;
    Ok(())
}

#[derive(Serialize)]
struct ScenarioEcho<'a> {
    scenario: &'a ScenarioFile,
    feature_rows: Option<usize>,
    realized_distance: Option<f64>,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let file = ScenarioFile::load(&a.scenario)?;
    let scenario = file.scenario()?;
    let exec = pool(&a.common)?;
    let mut methods = Vec::new();
    for m in &a.methods {
        if methods.iter().any(|c: &SelectionConfig| c.method == Method::from(*m)) {
            return Err(CliError::Usage(format!("method {m:?} listed twice")));
        }
        let mut c = file.selection.config(file.model(), (*m).into())?;
        if let Some(s) = a.common.seed {
            c.seed = s;
        }
        methods.push(c);
    }
    if methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    let seed = methods[0].seed;
    let mut manifest = RunManifest::start(
        "simulate",
        seed,
        exec.threads(),
        serde_json::json!({ "scenario": file, "replicates": a.replicates, "methods": methods }),
    );
    manifest.input = Some(crate::report::FileDigest::of(&a.scenario)?);

    let out = out_dir(&a.common)?;
    let data_dir = out.join("data");
    let report_dir = out.join("reports");
    for d in [&data_dir, &report_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }

    let features = scenario.features()?;
    let echo = ScenarioEcho {
        scenario: &file,
        feature_rows: features.as_ref().map(|f| f.matrix().rows()),
        realized_distance: features.as_ref().and_then(|f| f.realized_distance()),
    };
    let echo_path = out.join("scenario.json");
    io::write_text(&echo_path, &serde_json::to_string_pretty(&echo).expect("scenario serializes"))?;
    manifest.add_output(&echo_path)?;
    if let Some(f) = &features {
        let path = out.join("features.csv");
        let names: Vec<String> = (1..=f.matrix().cols()).map(|i| format!("f{i}")).collect();
        io::write_matrix(&path, f.matrix(), None, Some(&names))?;
        manifest.add_output(&path)?;
    }

    let rt = Runtime::new(&exec);
    let mut rows: Vec<ScenarioRow> = Vec::new();
    let mut failure: Option<CliError> = None;
    run_replicates(
        &scenario,
        features.as_ref().map(|f| f.matrix()),
        &methods,
        a.replicates,
        &rt,
        &mut |run| {
            if failure.is_some() {
                return;
            }
            let written = (|| -> Result<Vec<PathBuf>, CliError> {
                let mut paths = Vec::new();
                let path = data_dir.join(format!("rep_{:03}.csv", run.replicate));
                io::write_matrix(&path, run.data.values(), run.data.row_labels(), run.data.col_labels())?;
                paths.push(path);
                for report in &run.reports {
                    let path = report_dir.join(format!("rep_{:03}_{}.json", run.replicate, report.method.as_str()));
                    io::write_text(&path, &ReportDocument::new(report, run.data.removed_rows()).to_json())?;
                    paths.push(path);
                }
                Ok(paths)
            })();
            match written {
                Ok(paths) => {
                    for p in paths {
                        if let Err(e) = manifest.add_output(&p) {
                            failure = Some(e);
                        }
                    }
                    rows.extend(ScenarioRow::from_run(&run));
                }
                Err(e) => failure = Some(e),
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }

    let results = out.join("results.csv");
    write_results(&results, &rows)?;
    manifest.add_output(&results)?;
    let summary = out.join("summary.csv");
    write_summary(&summary, &rows, scenario.true_rank)?;
    manifest.add_output(&summary)?;
    manifest.finish(out)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_results(path: &Path, rows: &[ScenarioRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(["replicate", "method", "selected_rank", "capped", "data_digest"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.method.clone(),
            r.selected_rank.to_string(),
            r.capped.to_string(),
            format!("{:016x}", r.data_digest),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per method: replicates, correct selections (blank without a true
/// rank), cap hits, mean and sd of the selected rank.
fn write_summary(path: &Path, rows: &[ScenarioRow], true_rank: Option<usize>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(["method", "replicates", "correct", "capped", "mean", "sd"])
        .map_err(err)?;
    for s in summarize(rows, true_rank) {
        w.write_record([
            s.method,
            s.replicates.to_string(),
            true_rank.map_or(String::new(), |_| s.correct.to_string()),
            s.capped.to_string(),
            format!("{:.4}", s.mean),
            format!("{:.4}", s.sd),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
