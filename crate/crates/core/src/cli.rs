//! Command-line front end. Inputs are fully parsed and validated before any
//! output file is created, so a usage or validation failure leaves nothing
//! behind.

use crate::covariance::{effective_range_to_rho, Design, MaternParams};
use crate::error::Error;
use crate::estimation::{fit_fixed_rho, fit_mle, fit_tapered, FitConfig, FitMode, FitResult, Observations};
use crate::prediction::{krige, prediction_interval};
use crate::simulation::{
    perturbed_grid, run_experiment_with_progress, write_field_binary, Estimator, ExperimentConfig, ExperimentReport,
    FieldSimulator, RngStream,
};
use crate::verify::{run_verify, VerifyOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "maternkit",
    version,
    about = "Matérn likelihood, kriging and simulation study tools"
)]
pub struct Cli {
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the range and variance from observations.
    Fit(FitArgs),
    /// Krige at target locations.
    Predict(PredictArgs),
    /// Draw one field realization.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo study.
    Experiment(ExperimentArgs),
    /// Run the built-in invariant suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Single-column CSV of observations.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV of locations, one row per point.
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives fit.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    /// CSV of prediction locations.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives predictions.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// CSV of locations; defaults to a perturbed grid.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives field.csv and field.bin.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; receives report.csv and report.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicates.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Flip the sign of the middle term of the true MSPE.
    MspeSign,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Random cases per suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

/// Settings for `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitFileConfig {
    pub nu: f64,
    pub mode: FitMode,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub grid_points: usize,
    pub tolerance: f64,
    /// Range for `fixed_rho`.
    pub rho: Option<f64>,
    /// Sample size used for the interval in `fixed_rho`; defaults to n.
    pub n_for_ci: Option<usize>,
    /// Taper range for `tapered_mle`.
    pub taper_range: Option<f64>,
}

impl Default for FitFileConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            mode: FitMode::Mle,
            rho_lower: FitConfig::DEFAULT_RHO_LOWER,
            rho_upper: FitConfig::DEFAULT_RHO_UPPER,
            grid_points: FitConfig::DEFAULT_GRID_POINTS,
            tolerance: FitConfig::DEFAULT_TOLERANCE,
            rho: None,
            n_for_ci: None,
            taper_range: None,
        }
    }
}

impl FitFileConfig {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            nu: self.nu,
            rho_lower: self.rho_lower,
            rho_upper: self.rho_upper,
            grid_points: self.grid_points,
            tolerance: self.tolerance,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        self.fit_config().validate()?;
        match self.mode {
            FitMode::FixedRho if self.rho.is_none() => Err(Error::Config("mode fixed_rho needs rho".into())),
            FitMode::TaperedMle if self.taper_range.is_none() => {
                Err(Error::Config("mode tapered_mle needs taper_range".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Settings for `predict`. Without `rho` and `sigma2` the plug-in values are
/// maximum likelihood estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictFileConfig {
    pub nu: f64,
    pub rho: Option<f64>,
    pub sigma2: Option<f64>,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub level: f64,
    /// Generating model, for the true MSPE column.
    pub truth_rho: Option<f64>,
    pub truth_sigma2: Option<f64>,
}

impl Default for PredictFileConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            rho: None,
            sigma2: None,
            rho_lower: FitConfig::DEFAULT_RHO_LOWER,
            rho_upper: FitConfig::DEFAULT_RHO_UPPER,
            level: 0.95,
            truth_rho: None,
            truth_sigma2: None,
        }
    }
}

/// Settings for `simulate`. Give either `rho` or `effective_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateFileConfig {
    pub nu: f64,
    pub sigma2: f64,
    pub rho: Option<f64>,
    pub effective_range: Option<f64>,
    pub master_seed: u64,
    /// Stream index of the deviates.
    pub replicate: u64,
}

impl Default for SimulateFileConfig {
    fn default() -> Self {
        Self {
            nu: 0.5,
            sigma2: 1.0,
            rho: None,
            effective_range: Some(0.3),
            master_seed: 1,
            replicate: 0,
        }
    }
}

impl SimulateFileConfig {
    fn params(&self) -> Result<MaternParams, Error> {
        let rho = match (self.rho, self.effective_range) {
            (Some(rho), None) => rho,
            (None, Some(er)) => effective_range_to_rho(er, self.nu)?,
            _ => return Err(Error::Config("give exactly one of rho and effective_range".into())),
        };
        MaternParams::new(self.sigma2, rho, self.nu)
    }
}

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if matches!(e, Error::Io(_)) {
            EXIT_FAILURE
        } else {
            EXIT_USAGE
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Reads a TOML config, or JSON when the file name ends in `.json`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Numeric CSV rows; a first row that does not parse as numbers is a header.
pub fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>, Error> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("{}: line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

pub fn read_design(path: &Path) -> Result<Design, Error> {
    let rows = read_numeric_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no locations", path.display())));
    }
    Design::from_rows(&rows)
}

pub fn read_observations(path: &Path) -> Result<Observations, Error> {
    let rows = read_numeric_csv(path)?;
    if let Some(row) = rows.iter().find(|r| r.len() != 1) {
        return Err(Error::Parse(format!(
            "{}: expected one column, found {}",
            path.display(),
            row.len()
        )));
    }
    Observations::new(rows.into_iter().map(|r| r[0]).collect())
}

fn create_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("cannot create {}: {e}", path.display()),
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn cmd_fit(args: &FitArgs, quiet: bool) -> CliResult<()> {
    let config: FitFileConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => FitFileConfig::default(),
    };
    config.validate()?;
    let design = read_design(&args.design)?;
    let z = read_observations(&args.data)?;
    if z.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            found: z.len(),
        }
        .into());
    }
    let result: FitResult = match config.mode {
        FitMode::Mle => fit_mle(&z, &design, &config.fit_config())?,
        FitMode::FixedRho => fit_fixed_rho(
            &z,
            &design,
            config.rho.expect("validated"),
            config.nu,
            config.n_for_ci.unwrap_or(z.len()),
        )?,
        FitMode::TaperedMle => fit_tapered(
            &z,
            &design,
            &config.fit_config(),
            config.taper_range.expect("validated"),
        )?,
    };
    create_out_dir(&args.out)?;
    let json = serde_json::to_string_pretty(&result).expect("fit result serializes");
    write_file(&args.out.join("fit.json"), &(json + "\n"))?;
    if !quiet {
        println!(
            "rho_hat = {}  sigma2_hat = {}  c_hat = {}  ci = [{}, {}]{}",
            result.rho_hat,
            result.sigma2_hat,
            result.c_hat,
            result.ci_c.0,
            result.ci_c.1,
            if result.at_boundary {
                "  (range at search boundary)"
            } else {
                ""
            }
        );
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs, quiet: bool) -> CliResult<()> {
    let config: PredictFileConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => PredictFileConfig::default(),
    };
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0, 1), got {}", config.level)).into());
    }
    let design = read_design(&args.design)?;
    let targets = read_design(&args.targets)?;
    let z = read_observations(&args.data)?;
    if z.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            found: z.len(),
        }
        .into());
    }
    if targets.dim() != design.dim() {
        return Err(Error::DimensionMismatch {
            expected: design.dim(),
            found: targets.dim(),
        }
        .into());
    }
    let truth = match (config.truth_sigma2, config.truth_rho) {
        (Some(s), Some(r)) => Some(MaternParams::new(s, r, config.nu)?),
        (None, None) => None,
        _ => return Err(Error::Config("give both truth_sigma2 and truth_rho, or neither".into()).into()),
    };
    let plug_in = match (config.sigma2, config.rho) {
        (Some(s), Some(r)) => MaternParams::new(s, r, config.nu)?,
        (None, None) => {
            let fit_config = FitConfig::new(config.nu).with_bounds(config.rho_lower, config.rho_upper);
            fit_config.validate()?;
            let fit = fit_mle(&z, &design, &fit_config)?;
            MaternParams::new(fit.sigma2_hat, fit.rho_hat, config.nu)?
        }
        _ => return Err(Error::Config("give both sigma2 and rho, or neither".into()).into()),
    };
    let outputs = krige(&z, &design, &targets, &plug_in, truth.as_ref())?;

    let mut csv = String::new();
    let axes = ["x", "y", "z"];
    for axis in &axes[..targets.dim()] {
        csv.push_str(axis);
        csv.push(',');
    }
    csv.push_str("z_hat,naive_mspe,lower,upper");
    csv.push_str(if truth.is_some() { ",true_mspe\n" } else { "\n" });
    for o in &outputs {
        for c in o.target.coords() {
            write!(csv, "{c},").unwrap();
        }
        let (lo, hi) = prediction_interval(o.z_hat, o.naive_mspe, config.level)?;
        write!(csv, "{},{},{lo},{hi}", o.z_hat, o.naive_mspe).unwrap();
        match o.true_mspe {
            Some(t) => writeln!(csv, ",{t}").unwrap(),
            None => csv.push('\n'),
        }
    }
    create_out_dir(&args.out)?;
    write_file(&args.out.join("predictions.csv"), &csv)?;
    if !quiet {
        println!(
            "kriged {} targets with rho = {}, sigma2 = {}",
            outputs.len(),
            plug_in.rho(),
            plug_in.sigma2()
        );
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, quiet: bool) -> CliResult<()> {
    let mut config: SimulateFileConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => SimulateFileConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let params = config.params()?;
    let design = match &args.design {
        Some(p) => read_design(p)?,
        None => perturbed_grid(&ExperimentConfig::default(), RngStream::design(config.master_seed))?,
    };
    let simulator = FieldSimulator::new(&design, &params)?;
    let deviates = RngStream::new(config.master_seed, config.replicate).standard_normals(design.len());
    let field = simulator.simulate(&deviates)?;

    let mut csv = String::new();
    let axes = ["x", "y", "z"];
    writeln!(csv, "{},value", axes[..design.dim()].join(",")).unwrap();
    for (l, v) in design.locations().iter().zip(field.iter()) {
        for c in l.coords() {
            write!(csv, "{c},").unwrap();
        }
        writeln!(csv, "{v}").unwrap();
    }
    create_out_dir(&args.out)?;
    write_file(&args.out.join("field.csv"), &csv)?;
    write_field_binary(&args.out.join("field.bin"), field.as_slice()).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: e.to_string(),
    })?;
    if !quiet {
        println!(
            "simulated {} locations (rho = {}, nu = {}, sigma2 = {})",
            design.len(),
            params.rho(),
            params.nu(),
            params.sigma2()
        );
    }
    Ok(())
}

/// Coverage by setting and sample size, one column per estimator.
pub fn coverage_table(report: &ExperimentReport) -> String {
    metric_table(report, "coverage of the 95% interval for c (%)", |c| {
        Some(c.coverage_pct)
    })
}

/// Percent increase in average true MSPE over the optimal predictor.
pub fn mspe_table(report: &ExperimentReport) -> String {
    metric_table(report, "increase in MSPE over the optimal predictor (%)", |c| {
        c.pct_mspe_increase
    })
}

fn metric_table(
    report: &ExperimentReport,
    title: &str,
    metric: impl Fn(&crate::simulation::CellSummary) -> Option<f64>,
) -> String {
    let config = &report.config;
    let mut estimators = vec![Estimator::Mle];
    estimators.extend(config.fixed_rho_multipliers.iter().map(|&m| Estimator::Fixed(m)));
    let mut out = format!("{title}\n{:>5} {:>6} {:>6}", "nu", "ER", "n");
    for e in &estimators {
        let label = match e {
            Estimator::Mle => "MLE".to_string(),
            Estimator::Fixed(m) => format!("{m}rho0"),
        };
        write!(out, " {label:>9}").unwrap();
    }
    out.push('\n');
    for &nu in &config.nu_list {
        for &er in &config.effective_ranges {
            for &n in &config.sample_sizes {
                write!(out, "{nu:>5} {er:>6} {n:>6}").unwrap();
                for &e in &estimators {
                    match report.cell(nu, er, n, e).and_then(&metric) {
                        Some(v) => write!(out, " {v:>9.1}").unwrap(),
                        None => write!(out, " {:>9}", "-").unwrap(),
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

fn cmd_experiment(args: &ExperimentArgs, quiet: bool) -> CliResult<()> {
    let mut config: ExperimentConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    config.validate()?;
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be at least 1".into()).into());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("cannot start worker pool: {e}"),
    })?;
    let progress = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    let report = pool.install(|| run_experiment_with_progress(&config, &progress))?;

    create_out_dir(&args.out)?;
    write_file(&args.out.join("report.csv"), &report.to_csv())?;
    write_file(&args.out.join("report.json"), &(report.to_json() + "\n"))?;
    if !quiet {
        println!("{}", coverage_table(&report));
        if config.predict {
            println!("{}", mspe_table(&report));
        }
        println!(
            "seed {}  config {}  failed units {}/{}",
            report.metadata.master_seed,
            report.metadata.config_hash,
            report.metadata.failed_units,
            report.metadata.total_units
        );
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, quiet: bool) -> CliResult<()> {
    let options = VerifyOptions {
        seed: args.seed,
        cases: args.cases,
        inject_mspe_sign_error: args.inject_fault == Some(Fault::MspeSign),
    };
    let report = run_verify(&options);
    for suite in &report.suites {
        if !quiet || !suite.passed() {
            println!("{suite}");
        }
    }
    if report.passed() {
        if !quiet {
            println!("all {} suites passed (seed {})", report.suites.len(), args.seed);
        }
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_FAILURE,
            message: format!(
                "{} of {} suites failed (seed {})",
                report.suites.iter().filter(|s| !s.passed()).count(),
                report.suites.len(),
                args.seed
            ),
        })
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.quiet),
        Command::Predict(a) => cmd_predict(a, cli.quiet),
        Command::Simulate(a) => cmd_simulate(a, cli.quiet),
        Command::Experiment(a) => cmd_experiment(a, cli.quiet),
        Command::Verify(a) => cmd_verify(a, cli.quiet),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_row_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y\n0.1,0.2\n0.3, 0.4\n").unwrap();
        let d = read_design(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.location(1).coords(), &[0.3, 0.4]);
        std::fs::write(&p, "0.1,0.2\nfoo,0.4\n").unwrap();
        assert!(matches!(read_design(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn observation_files_need_one_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        std::fs::write(&p, "1.0,2.0\n").unwrap();
        assert!(read_observations(&p).is_err());
        std::fs::write(&p, "z\n1.0\n-2.5\n").unwrap();
        assert_eq!(read_observations(&p).unwrap().as_slice(), &[1.0, -2.5]);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).code, EXIT_USAGE);
        assert_eq!(
            CliError::from(Error::DegenerateObservations("x".into())).code,
            EXIT_NUMERICAL
        );
        assert_eq!(CliError::from(Error::Io(std::io::Error::other("x"))).code, EXIT_FAILURE);
    }

    #[test]
    fn simulate_config_needs_one_range() {
        let both = SimulateFileConfig {
            rho: Some(0.1),
            ..SimulateFileConfig::default()
        };
        assert!(both.params().is_err());
        assert!(SimulateFileConfig::default().params().is_ok());
    }

    #[test]
    fn json_and_toml_configs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "replicates = 7\nnu_list = [1.5]\n").unwrap();
        std::fs::write(&j, r#"{"replicates": 7, "nu_list": [1.5]}"#).unwrap();
        let a: ExperimentConfig = load_config(&t).unwrap();
        let b: ExperimentConfig = load_config(&j).unwrap();
        assert_eq!(a, b);
        std::fs::write(&j, r#"{"replicatez": 7}"#).unwrap();
        let err = load_config::<ExperimentConfig>(&j).unwrap_err();
        assert!(err.to_string().contains("replicatez"));
    }
}
