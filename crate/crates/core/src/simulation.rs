//! The Monte Carlo study: perturbed-grid designs, nested observation
//! subsets, a prediction grid, Cholesky field simulation, and a replicate
//! runner that tabulates interval coverage, bias and prediction loss for the
//! maximum likelihood and fixed-range estimators.
//!
//! Every random quantity comes from a [`RngStream`] keyed by the master seed
//! and a stream index, and per-replicate results are aggregated in replicate
//! order, so reports do not depend on the worker count.

use crate::covariance::{correlation_matrix, effective_range_to_rho, Design, Location, MaternParams};
use crate::error::{Error, Result};
use crate::estimation::{confidence_interval, FitConfig, Observations, ProfileLikelihood};
use crate::linalg::Factor;
use crate::prediction::{normal_quantile, Kriger, TargetBatch, TruthMatrices};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

/// Stream index reserved for the shared observation design.
pub const DESIGN_STREAM: u64 = u64::MAX;

/// A deterministic random substream: `(master_seed, index)` always yields
/// the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, index: u64) -> Self {
        Self { master_seed, index }
    }

    pub fn design(master_seed: u64) -> Self {
        Self::new(master_seed, DESIGN_STREAM)
    }

    /// Design stream for replicate `r` when designs are redrawn per replicate.
    pub fn replicate_design(master_seed: u64, replicate: u64) -> Self {
        Self::new(master_seed, DESIGN_STREAM - 1 - replicate)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.index);
        rng
    }

    pub fn standard_normals(&self, len: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..len).map(|_| rng.sample(StandardNormal)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub nu_list: Vec<f64>,
    pub effective_ranges: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub fixed_rho_multipliers: Vec<f64>,
    pub master_seed: u64,
    /// Marginal variance of the simulated fields.
    pub sigma2: f64,
    /// Upper search bound for the range, as a multiple of the true range.
    pub rho_bounds_multiplier: f64,
    /// Lower search bound for the range.
    pub rho_lower: f64,
    pub grid_points: usize,
    pub tolerance: f64,
    pub grid_side: usize,
    pub grid_step: f64,
    pub grid_origin: f64,
    pub perturb_half_width: f64,
    pub prediction_grid_side: usize,
    pub ci_level: f64,
    /// Compute prediction metrics (needs the field at the prediction grid).
    pub predict: bool,
    /// Draw a fresh perturbed grid and subset for every replicate.
    pub redraw_design: bool,
    pub max_failure_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nu_list: vec![0.5, 1.5],
            effective_ranges: vec![0.1, 0.3, 1.0],
            sample_sizes: vec![400, 900, 1600],
            replicates: 1000,
            fixed_rho_multipliers: vec![0.2, 0.5, 1.0, 2.0, 5.0],
            master_seed: 20_130_601,
            sigma2: 1.0,
            rho_bounds_multiplier: 15.0,
            rho_lower: f64::EPSILON,
            grid_points: FitConfig::DEFAULT_GRID_POINTS,
            tolerance: FitConfig::DEFAULT_TOLERANCE,
            grid_side: 67,
            grid_step: 0.015,
            grid_origin: 0.005,
            perturb_half_width: 0.005,
            prediction_grid_side: 50,
            ci_level: 0.95,
            predict: true,
            redraw_design: false,
            max_failure_fraction: 0.01,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.nu_list.is_empty() || self.effective_ranges.is_empty() || self.sample_sizes.is_empty() {
            return fail("nu_list, effective_ranges and sample_sizes must be nonempty".into());
        }
        if let Some(v) = self.nu_list.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return fail(format!("nu_list entries must be positive, got {v}"));
        }
        if let Some(v) = self.effective_ranges.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return fail(format!("effective_ranges entries must be positive, got {v}"));
        }
        if let Some(v) = self
            .fixed_rho_multipliers
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return fail(format!("fixed_rho_multipliers entries must be positive, got {v}"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) || self.sample_sizes[0] == 0 {
            return fail("sample_sizes must be positive and strictly ascending".into());
        }
        let population = self.grid_side * self.grid_side;
        if self.grid_side == 0 || *self.sample_sizes.last().unwrap() > population {
            return fail(format!("largest sample size exceeds the {population} grid locations"));
        }
        if !(self.grid_step > 0.0) || !self.grid_origin.is_finite() {
            return fail("grid_step must be positive and grid_origin finite".into());
        }
        if !(self.perturb_half_width >= 0.0) || 2.0 * self.perturb_half_width >= self.grid_step {
            return fail("perturb_half_width must lie in [0, grid_step / 2)".into());
        }
        if self.predict && self.prediction_grid_side == 0 {
            return fail("prediction_grid_side must be at least 1".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return fail(format!("ci_level must lie in (0, 1), got {}", self.ci_level));
        }
        if !(self.sigma2 > 0.0) {
            return fail("sigma2 must be positive".into());
        }
        if !(self.rho_lower > 0.0) || !(self.rho_bounds_multiplier > 0.0) {
            return fail("rho_lower and rho_bounds_multiplier must be positive".into());
        }
        if self.grid_points < 2 || !(self.tolerance > 0.0) {
            return fail("grid_points must be >= 2 and tolerance positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return fail("max_failure_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn fit_config(&self, nu: f64, rho0: f64) -> FitConfig {
        FitConfig {
            nu,
            rho_lower: self.rho_lower,
            rho_upper: self.rho_bounds_multiplier * rho0,
            grid_points: self.grid_points,
            tolerance: self.tolerance,
        }
    }
}

/// Regular `side x side` lattice, each point jittered uniformly within
/// `perturb_half_width` in both coordinates.
pub fn perturbed_grid(config: &ExperimentConfig, stream: RngStream) -> Result<Design> {
    let side = config.grid_side;
    if side == 0 || !(config.grid_step > 0.0) || !(config.perturb_half_width >= 0.0) {
        return Err(Error::Config("grid parameters must be positive".into()));
    }
    let hw = config.perturb_half_width;
    let mut rng = stream.rng();
    let mut jitter = || if hw > 0.0 { rng.random_range(-hw..=hw) } else { 0.0 };
    let mut locations = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let x = config.grid_origin + i as f64 * config.grid_step + jitter();
            let y = config.grid_origin + j as f64 * config.grid_step + jitter();
            locations.push(Location::new(&[x, y])?);
        }
    }
    if 2.0 * hw < config.grid_step {
        // jitter below half the spacing cannot make two points coincide
        Design::from_locations_unchecked(locations)
    } else {
        Design::new(locations)
    }
}

/// `max(sizes)` indices drawn uniformly without replacement; each subset is a
/// prefix of this draw.
pub fn nested_subset_indices(population: usize, sizes: &[usize], stream: RngStream) -> Result<Vec<usize>> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "subset sizes must be positive and strictly ascending".into(),
        ));
    }
    let largest = *sizes.last().unwrap();
    if largest > population {
        return Err(Error::Config(format!(
            "subset size {largest} exceeds population {population}"
        )));
    }
    let mut rng = stream.rng();
    let mut all: Vec<usize> = (0..population).collect();
    let (chosen, _) = all.partial_shuffle(&mut rng, largest);
    Ok(chosen.to_vec())
}

pub fn nested_subsets(design: &Design, sizes: &[usize], stream: RngStream) -> Result<Vec<Design>> {
    let indices = nested_subset_indices(design.len(), sizes, stream)?;
    sizes.iter().map(|&n| design.subset(&indices[..n])).collect()
}

/// `side x side` cell midpoints `((i + 0.5) / side, (j + 0.5) / side)` of the unit square.
pub fn prediction_grid(config: &ExperimentConfig) -> Result<Design> {
    let side = config.prediction_grid_side;
    if side == 0 {
        return Err(Error::Config("prediction_grid_side must be at least 1".into()));
    }
    let mut locations = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let x = (i as f64 + 0.5) / side as f64;
            let y = (j as f64 + 0.5) / side as f64;
            locations.push(Location::new(&[x, y])?);
        }
    }
    Design::from_locations_unchecked(locations)
}

/// Draws `sigma L e` with `L L' = Gamma(rho)` for supplied deviates `e`.
#[derive(Debug, Clone)]
pub struct FieldSimulator {
    factor: Factor,
    sigma: f64,
}

impl FieldSimulator {
    pub fn new(design: &Design, params: &MaternParams) -> Result<Self> {
        let gamma = correlation_matrix(design, params.rho(), params.nu())?;
        Ok(Self {
            factor: Factor::new(gamma.into_matrix(), params.rho())?,
            sigma: params.sigma2().sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn simulate(&self, deviates: &[f64]) -> Result<DVector<f64>> {
        if deviates.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: deviates.len(),
            });
        }
        let e = DVector::from_column_slice(deviates);
        Ok(self.factor.mul_l(&e) * self.sigma)
    }
}

pub fn simulate_gp(design: &Design, params: &MaternParams, deviates: &[f64]) -> Result<Observations> {
    let field = FieldSimulator::new(design, params)?.simulate(deviates)?;
    Observations::from_vector(field)
}

/// Writes values as consecutive little-endian `f64`s.
pub fn write_field_binary(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_field_binary(path: &Path) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() % 8 != 0 {
        return Err(Error::Parse(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// How the range is chosen for a row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimator {
    Mle,
    /// Range fixed at this multiple of the true range.
    Fixed(f64),
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Mle => write!(f, "mle"),
            Estimator::Fixed(m) => write!(f, "fixed_{m}"),
        }
    }
}

impl From<Estimator> for String {
    fn from(e: Estimator) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Estimator {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s == "mle" {
            return Ok(Estimator::Mle);
        }
        s.strip_prefix("fixed_")
            .and_then(|m| m.parse::<f64>().ok())
            .map(Estimator::Fixed)
            .ok_or_else(|| format!("unknown estimator label {s:?}"))
    }
}

/// Aggregates for one `(nu, effective range, n, estimator)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub nu: f64,
    pub effective_range: f64,
    pub rho0: f64,
    pub c0: f64,
    pub n: usize,
    pub estimator: Estimator,
    pub valid_replicates: usize,
    pub coverage_pct: f64,
    pub relative_bias_of_c: f64,
    pub mean_c_hat: f64,
    pub pct_mspe_increase: Option<f64>,
    pub prediction_interval_coverage: Option<f64>,
    pub boundary_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replicate: usize,
    pub nu: f64,
    pub effective_range: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub config_hash: String,
    pub replicates: usize,
    pub total_units: usize,
    pub failed_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<FailureRecord>,
}

pub const CSV_HEADER: &str = "nu,effective_range,rho0,n,estimator,metric,value,replicates,seed";

impl ExperimentReport {
    pub fn cell(&self, nu: f64, effective_range: f64, n: usize, estimator: Estimator) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.nu == nu && c.effective_range == effective_range && c.n == n && c.estimator == estimator)
    }

    /// One row per cell and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let mut metrics = vec![
                ("coverage_pct", c.coverage_pct),
                ("relative_bias_of_c", c.relative_bias_of_c),
                ("mean_c_hat", c.mean_c_hat),
            ];
            if let Some(v) = c.pct_mspe_increase {
                metrics.push(("pct_mspe_increase", v));
            }
            if let Some(v) = c.prediction_interval_coverage {
                metrics.push(("prediction_interval_coverage", v));
            }
            for (metric, value) in metrics {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    c.nu,
                    c.effective_range,
                    c.rho0,
                    c.n,
                    c.estimator,
                    metric,
                    value,
                    c.valid_replicates,
                    self.metadata.master_seed
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Observation subsets and prediction targets shared by every setting.
#[derive(Debug, Clone)]
struct Layout {
    /// Nested observation designs, one per sample size.
    observed: Vec<Design>,
    targets: Option<Design>,
    /// Largest observation design followed by the targets.
    joint: Design,
}

impl Layout {
    fn draw(config: &ExperimentConfig, stream: RngStream) -> Result<Self> {
        let grid = perturbed_grid(config, stream)?;
        let indices = nested_subset_indices(grid.len(), &config.sample_sizes, stream_after_grid(stream))?;
        let observed = config
            .sample_sizes
            .iter()
            .map(|&n| grid.subset(&indices[..n]))
            .collect::<Result<Vec<_>>>()?;
        let targets = if config.predict {
            Some(prediction_grid(config)?)
        } else {
            None
        };
        let largest = observed.last().expect("nonempty sample sizes");
        let joint = match &targets {
            Some(t) => largest.concat(t)?,
            None => largest.clone(),
        };
        Ok(Self {
            observed,
            targets,
            joint,
        })
    }
}

/// The subset draw uses its own substream so the grid jitter and the subset
/// are independent of each other's length.
fn stream_after_grid(stream: RngStream) -> RngStream {
    RngStream::new(stream.master_seed ^ 0x9e37_79b9_7f4a_7c15, stream.index)
}

#[derive(Debug, Clone, Copy)]
struct Setting {
    nu: f64,
    effective_range: f64,
    rho0: f64,
}

/// Per-sample-size quantities that do not depend on the field realization.
struct SizeContext {
    design: Design,
    fixed: Vec<FixedContext>,
    truth: Option<TruthMatrices>,
    /// Average optimal MSPE over the targets (true range, true variance).
    optimal_mspe: Option<f64>,
}

struct FixedContext {
    rho: f64,
    factor: Factor,
    batch: Option<TargetBatch>,
    /// Average true MSPE over the targets of the predictor with this range.
    true_mspe: Option<f64>,
}

struct SettingContext {
    setting: Setting,
    params: MaternParams,
    simulator: FieldSimulator,
    n_max: usize,
    sizes: Vec<SizeContext>,
    targets: Option<Design>,
}

#[derive(Debug, Clone, Copy)]
struct EstimatorOutcome {
    c_hat: f64,
    covered: bool,
    at_boundary: bool,
    true_mspe: Option<f64>,
    optimal_mspe: Option<f64>,
    pi_coverage: Option<f64>,
}

type ReplicateOutcome = Vec<Vec<EstimatorOutcome>>;

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl SettingContext {
    fn build(layout: &Layout, setting: Setting, config: &ExperimentConfig) -> Result<Self> {
        let params = MaternParams::new(config.sigma2, setting.rho0, setting.nu)?;
        let simulator = FieldSimulator::new(&layout.joint, &params)?;
        let mut sizes = Vec::with_capacity(layout.observed.len());
        for design in &layout.observed {
            let (truth, optimal_mspe) = match &layout.targets {
                Some(targets) => {
                    let truth = TruthMatrices::new(design, targets, params)?;
                    let optimal = Kriger::new(design, setting.rho0, setting.nu)?.batch(targets)?;
                    let avg = mean(&optimal.naive_mspe(config.sigma2));
                    (Some(truth), Some(avg))
                }
                None => (None, None),
            };
            let mut fixed = Vec::with_capacity(config.fixed_rho_multipliers.len());
            for &m in &config.fixed_rho_multipliers {
                let rho = m * setting.rho0;
                let kriger = Kriger::new(design, rho, setting.nu)?;
                let (batch, true_mspe) = match (&layout.targets, &truth) {
                    (Some(targets), Some(truth)) => {
                        let batch = kriger.batch(targets)?;
                        let avg = mean(&batch.true_mspe(truth));
                        (Some(batch), Some(avg))
                    }
                    _ => (None, None),
                };
                fixed.push(FixedContext {
                    rho,
                    factor: kriger.factor().clone(),
                    batch,
                    true_mspe,
                });
            }
            sizes.push(SizeContext {
                design: design.clone(),
                fixed,
                truth,
                optimal_mspe,
            });
        }
        Ok(Self {
            setting,
            params,
            simulator,
            n_max: layout.observed.last().unwrap().len(),
            sizes,
            targets: layout.targets.clone(),
        })
    }

    fn replicate(&self, replicate: usize, config: &ExperimentConfig) -> Result<ReplicateOutcome> {
        let deviates = RngStream::new(config.master_seed, replicate as u64).standard_normals(self.simulator.len());
        let field = self.simulator.simulate(&deviates)?;
        let observed = field.rows(0, self.n_max).into_owned();
        let at_targets = field.rows(self.n_max, field.len() - self.n_max).into_owned();
        let c0 = self.params.microergodic();
        let nu = self.setting.nu;
        let quantile = normal_quantile(0.5 * (1.0 + config.ci_level))?;
        let pi_coverage = |preds: &DVector<f64>, sigma2: f64, explained: &[f64]| -> f64 {
            let hits = (0..preds.len())
                .filter(|&j| {
                    let half = quantile * (sigma2 * (1.0 - explained[j]).max(0.0)).sqrt();
                    (at_targets[j] - preds[j]).abs() <= half
                })
                .count();
            hits as f64 / preds.len() as f64
        };

        let mut outcome = Vec::with_capacity(self.sizes.len());
        for size in &self.sizes {
            let n = size.design.len();
            let z = Observations::from_vector(observed.rows(0, n).into_owned())?;
            let mut row = Vec::with_capacity(1 + size.fixed.len());

            let profile = ProfileLikelihood::new(&z, &size.design, nu)?;
            let fit = profile.fit(&config.fit_config(nu, self.setting.rho0))?;
            let (true_mspe, pi) = match (&self.targets, &size.truth) {
                (Some(targets), Some(truth)) => {
                    let batch = Kriger::new(&size.design, fit.rho_hat, nu)?.batch(targets)?;
                    let preds = batch.predictions(z.values());
                    (
                        Some(mean(&batch.true_mspe(truth))),
                        Some(pi_coverage(&preds, fit.sigma2_hat, batch.explained())),
                    )
                }
                _ => (None, None),
            };
            row.push(EstimatorOutcome {
                c_hat: fit.c_hat,
                covered: fit.covers(c0),
                at_boundary: fit.at_boundary,
                true_mspe,
                optimal_mspe: size.optimal_mspe,
                pi_coverage: pi,
            });

            for fixed in &size.fixed {
                let sigma2 = fixed.factor.quad_form(z.values()) / n as f64;
                let c_hat = sigma2 / fixed.rho.powf(2.0 * nu);
                let (lo, hi) = confidence_interval(c_hat, n);
                let pi = fixed.batch.as_ref().map(|batch| {
                    let preds = batch.predictions(z.values());
                    pi_coverage(&preds, sigma2, batch.explained())
                });
                row.push(EstimatorOutcome {
                    c_hat,
                    covered: lo <= c0 && c0 <= hi,
                    at_boundary: false,
                    true_mspe: fixed.true_mspe,
                    optimal_mspe: size.optimal_mspe,
                    pi_coverage: pi,
                });
            }
            outcome.push(row);
        }
        Ok(outcome)
    }
}

/// Runs the full factorial study. Replicates run on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_progress(config, &|_| {})
}

pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentReport> {
    config.validate()?;
    let settings = config
        .nu_list
        .iter()
        .flat_map(|&nu| config.effective_ranges.iter().map(move |&er| (nu, er)))
        .map(|(nu, er)| {
            Ok(Setting {
                nu,
                effective_range: er,
                rho0: effective_range_to_rho(er, nu)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let shared = if config.redraw_design {
        None
    } else {
        Some(Layout::draw(config, RngStream::design(config.master_seed))?)
    };

    let mut estimators = vec![Estimator::Mle];
    estimators.extend(config.fixed_rho_multipliers.iter().map(|&m| Estimator::Fixed(m)));

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for setting in &settings {
        progress(&format!(
            "nu={} effective_range={} rho0={:.6}: {} replicates",
            setting.nu, setting.effective_range, setting.rho0, config.replicates
        ));
        let outcomes: Vec<Result<ReplicateOutcome>> = match &shared {
            Some(layout) => {
                let ctx = SettingContext::build(layout, *setting, config)?;
                (0..config.replicates)
                    .into_par_iter()
                    .map(|r| ctx.replicate(r, config))
                    .collect()
            }
            None => (0..config.replicates)
                .into_par_iter()
                .map(|r| {
                    let layout = Layout::draw(config, RngStream::replicate_design(config.master_seed, r as u64))?;
                    SettingContext::build(&layout, *setting, config)?.replicate(r, config)
                })
                .collect(),
        };

        let mut valid = Vec::with_capacity(outcomes.len());
        for (r, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(o) => valid.push(o),
                Err(e) => failures.push(FailureRecord {
                    replicate: r,
                    nu: setting.nu,
                    effective_range: setting.effective_range,
                    message: e.to_string(),
                }),
            }
        }
        cells.extend(summarize(config, setting, &estimators, &valid));
    }

    let total_units = settings.len() * config.replicates;
    let limit = (config.max_failure_fraction * total_units as f64).floor() as usize;
    if failures.len() > limit {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: total_units,
            limit,
        });
    }
    Ok(ExperimentReport {
        metadata: ReportMetadata {
            master_seed: config.master_seed,
            config_hash: config.hash(),
            replicates: config.replicates,
            total_units,
            failed_units: failures.len(),
        },
        config: config.clone(),
        cells,
        failures,
    })
}

fn summarize(
    config: &ExperimentConfig,
    setting: &Setting,
    estimators: &[Estimator],
    outcomes: &[ReplicateOutcome],
) -> Vec<CellSummary> {
    let c0 = config.sigma2 / setting.rho0.powf(2.0 * setting.nu);
    let mut cells = Vec::new();
    for (k, &n) in config.sample_sizes.iter().enumerate() {
        for (e, &estimator) in estimators.iter().enumerate() {
            let rows: Vec<&EstimatorOutcome> = outcomes.iter().map(|o| &o[k][e]).collect();
            let count = rows.len();
            let denom = count.max(1) as f64;
            let covered = rows.iter().filter(|r| r.covered).count();
            let mean_c = rows.iter().map(|r| r.c_hat).sum::<f64>() / denom;
            let mspe = {
                let num: Option<f64> = rows.iter().map(|r| r.true_mspe).sum();
                let den: Option<f64> = rows.iter().map(|r| r.optimal_mspe).sum();
                match (num, den) {
                    (Some(num), Some(den)) if count > 0 => Some(100.0 * (num / den - 1.0)),
                    _ => None,
                }
            };
            let pi: Option<f64> = rows.iter().map(|r| r.pi_coverage).sum::<Option<f64>>();
            cells.push(CellSummary {
                nu: setting.nu,
                effective_range: setting.effective_range,
                rho0: setting.rho0,
                c0,
                n,
                estimator,
                valid_replicates: count,
                coverage_pct: 100.0 * covered as f64 / denom,
                relative_bias_of_c: (mean_c - c0) / c0,
                mean_c_hat: mean_c,
                pct_mspe_increase: mspe,
                prediction_interval_coverage: pi.filter(|_| count > 0).map(|p| 100.0 * p / denom),
                boundary_hits: rows.iter().filter(|r| r.at_boundary).count(),
            });
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            nu_list: vec![0.5],
            effective_ranges: vec![0.3],
            sample_sizes: vec![20, 40],
            replicates: 6,
            fixed_rho_multipliers: vec![0.2, 1.0, 5.0],
            grid_side: 10,
            grid_step: 0.1,
            grid_origin: 0.05,
            perturb_half_width: 0.02,
            prediction_grid_side: 4,
            master_seed: 7,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_grid_matches_layout() {
        let config = ExperimentConfig::default();
        let design = perturbed_grid(&config, RngStream::design(1)).unwrap();
        assert_eq!(design.len(), 4489);
        assert!(design.min_pairwise_distance() >= 0.005);
        for l in design.locations() {
            assert!(l.coords().iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }

    #[test]
    fn unperturbed_grid_is_regular() {
        let config = ExperimentConfig {
            grid_side: 12,
            perturb_half_width: 0.0,
            ..ExperimentConfig::default()
        };
        let design = perturbed_grid(&config, RngStream::design(1)).unwrap();
        assert!((design.min_pairwise_distance() - 0.015).abs() < 1e-12);
        assert_eq!(design.location(13).coords(), &[0.005 + 0.015, 0.005 + 0.015]);
    }

    #[test]
    fn subsets_are_nested_and_deterministic() {
        let config = ExperimentConfig {
            grid_side: 30,
            ..ExperimentConfig::default()
        };
        let design = perturbed_grid(&config, RngStream::design(3)).unwrap();
        let a = nested_subsets(&design, &[100, 400, 900], RngStream::new(3, 1)).unwrap();
        let b = nested_subsets(&design, &[100, 400, 900], RngStream::new(3, 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].locations()[..100], *a[0].locations());
        assert_eq!(a[2].locations()[..400], *a[1].locations());
        // the full population as a set
        let mut full: Vec<[u64; 2]> = a[2]
            .locations()
            .iter()
            .map(|l| [l.coords()[0].to_bits(), l.coords()[1].to_bits()])
            .collect();
        let mut all: Vec<[u64; 2]> = design
            .locations()
            .iter()
            .map(|l| [l.coords()[0].to_bits(), l.coords()[1].to_bits()])
            .collect();
        full.sort();
        all.sort();
        assert_eq!(full, all);
        assert!(nested_subsets(&design, &[901], RngStream::new(3, 1)).is_err());
        assert!(nested_subsets(&design, &[10, 10], RngStream::new(3, 1)).is_err());
    }

    #[test]
    fn prediction_grid_examples() {
        let g = prediction_grid(&ExperimentConfig::default()).unwrap();
        assert_eq!(g.len(), 2500);
        assert!(g
            .locations()
            .iter()
            .all(|l| l.coords().iter().all(|&c| (0.0..=1.0).contains(&c))));
        let one = prediction_grid(&ExperimentConfig {
            prediction_grid_side: 1,
            ..ExperimentConfig::default()
        })
        .unwrap();
        assert_eq!(one.location(0).coords(), &[0.5, 0.5]);
    }

    #[test]
    fn simulation_examples() {
        let design = Design::from_rows(&[[0.0, 0.0], [0.3, 0.1], [0.5, 0.9]]).unwrap();
        let params = MaternParams::new(4.0, 0.2, 1.5).unwrap();
        let z = simulate_gp(&design, &params, &[0.0; 3]).unwrap();
        assert!(z.is_zero());
        let single = Design::from_rows(&[[0.1]]).unwrap();
        let z = simulate_gp(&single, &params, &[0.7]).unwrap();
        assert!((z.values()[0] - 1.4).abs() < 1e-15);
        assert!(simulate_gp(&design, &params, &[1.0]).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let a = RngStream::new(5, 0).standard_normals(10);
        let b = RngStream::new(5, 0).standard_normals(10);
        let c = RngStream::new(5, 1).standard_normals(10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a prefix of a longer draw is the shorter draw
        assert_eq!(RngStream::new(5, 0).standard_normals(4), a[..4]);
    }

    #[test]
    fn binary_field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let values = vec![1.5, -0.25, f64::MAX, 3e-300];
        write_field_binary(&path, &values).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &1.5f64.to_le_bytes());
        assert_eq!(read_field_binary(&path).unwrap(), values);
    }

    #[test]
    fn estimator_labels_round_trip() {
        for e in [Estimator::Mle, Estimator::Fixed(0.2), Estimator::Fixed(5.0)] {
            assert_eq!(Estimator::try_from(e.to_string()).unwrap(), e);
        }
        assert!(Estimator::try_from("bogus".to_string()).is_err());
    }

    #[test]
    fn small_experiment_is_deterministic_and_consistent() {
        let config = small_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.metadata.failed_units, 0);
        // rows: 2 sample sizes x (1 MLE + 3 fixed)
        assert_eq!(a.cells.len(), 8);
        for c in &a.cells {
            assert!((0.0..=100.0).contains(&c.coverage_pct));
            assert!(c.pct_mspe_increase.unwrap() >= -1e-9, "{c:?}");
            assert!(c.prediction_interval_coverage.is_some());
        }
        let at_truth = a.cell(0.5, 0.3, 40, Estimator::Fixed(1.0)).unwrap();
        assert!(at_truth.pct_mspe_increase.unwrap().abs() < 1e-9);
        let echoed: ExperimentReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(echoed.config, config);
    }

    #[test]
    fn fixed_rho_bias_is_ordered_in_every_replicate() {
        let config = small_config();
        let layout = Layout::draw(&config, RngStream::design(config.master_seed)).unwrap();
        let setting = Setting {
            nu: 0.5,
            effective_range: 0.3,
            rho0: effective_range_to_rho(0.3, 0.5).unwrap(),
        };
        let ctx = SettingContext::build(&layout, setting, &config).unwrap();
        for r in 0..config.replicates {
            let outcome = ctx.replicate(r, &config).unwrap();
            for row in outcome {
                // multipliers 0.2, 1, 5 follow the MLE entry
                assert!(row[3].c_hat <= row[2].c_hat * (1.0 + 1e-9));
                assert!(row[2].c_hat <= row[1].c_hat * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn redrawn_designs_run() {
        let config = ExperimentConfig {
            redraw_design: true,
            replicates: 3,
            ..small_config()
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.metadata.failed_units, 0);
        assert_eq!(report.cells.len(), 8);
    }

    #[test]
    fn config_validation_and_unknown_keys() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig {
            sample_sizes: vec![900, 400],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let too_big = ExperimentConfig {
            sample_sizes: vec![5000],
            ..ExperimentConfig::default()
        };
        assert!(too_big.validate().is_err());
        let err = toml::from_str::<ExperimentConfig>("replicates = 3\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let partial: ExperimentConfig = toml::from_str("replicates = 3\n").unwrap();
        assert_eq!(partial.replicates, 3);
        assert_eq!(partial.grid_side, 67);
    }
}
