//! Gaussian log-likelihood, profile estimation of the variance, bounded
//! maximization over the range, and the microergodic estimator with its
//! normal-approximation confidence interval.

use crate::covariance::{check_positive, correlation_from_distances, wendland1, Design, MaternParams, UNDERFLOW_RATIO};
use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::optimize::maximize_log_grid;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Normal quantile used for intervals on `c`.
pub const CI_Z: f64 = 1.96;

/// Observed field values aligned with a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    values: DVector<f64>,
}

impl Observations {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateObservations("no observations".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations must be finite"));
        }
        Ok(Self {
            values: DVector::from_vec(values),
        })
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        Self::new(values.as_slice().to_vec())
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Result<Observations> {
        if n == 0 || n > self.len() {
            return Err(Error::domain(format!("prefix {n} of {} observations", self.len())));
        }
        Ok(Self {
            values: self.values.rows(0, n).into_owned(),
        })
    }

    pub(crate) fn check_against(&self, design: &Design) -> Result<()> {
        if self.len() == design.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: design.len(),
                found: self.len(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Mle,
    FixedRho,
    TaperedMle,
}

/// Known smoothness plus the search interval and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub nu: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub grid_points: usize,
    pub tolerance: f64,
}

impl FitConfig {
    pub const DEFAULT_RHO_LOWER: f64 = 1e-4;
    pub const DEFAULT_RHO_UPPER: f64 = 1e4;
    pub const DEFAULT_GRID_POINTS: usize = 50;
    pub const DEFAULT_TOLERANCE: f64 = 1e-8;

    pub fn new(nu: f64) -> Self {
        Self {
            nu,
            rho_lower: Self::DEFAULT_RHO_LOWER,
            rho_upper: Self::DEFAULT_RHO_UPPER,
            grid_points: Self::DEFAULT_GRID_POINTS,
            tolerance: Self::DEFAULT_TOLERANCE,
        }
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.rho_lower = lower;
        self.rho_upper = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("nu", self.nu)?;
        check_positive("rho_lower", self.rho_lower)?;
        if !(self.rho_upper > self.rho_lower && self.rho_upper.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < rho_lower < rho_upper < inf, got [{}, {}]",
                self.rho_lower, self.rho_upper
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        check_positive("tolerance", self.tolerance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mode: FitMode,
    pub nu: f64,
    pub rho_hat: f64,
    pub sigma2_hat: f64,
    pub c_hat: f64,
    pub loglik: f64,
    pub ci_c: (f64, f64),
    pub n: usize,
    /// The range estimate sits on the search interval's boundary.
    pub at_boundary: bool,
    pub evaluations: usize,
}

impl FitResult {
    pub fn covers(&self, c: f64) -> bool {
        self.ci_c.0 <= c && c <= self.ci_c.1
    }
}

/// `sigma2 / rho^(2 nu)`.
pub fn microergodic(sigma2: f64, rho: f64, nu: f64) -> Result<f64> {
    check_positive("sigma2", sigma2)?;
    check_positive("rho", rho)?;
    check_positive("nu", nu)?;
    Ok(sigma2 / rho.powf(2.0 * nu))
}

/// `c_hat +/- 1.96 (2 c_hat^2 / n)^(1/2)`. Lower bounds are not truncated at 0.
pub fn confidence_interval(c_hat: f64, n: usize) -> (f64, f64) {
    let half = CI_Z * (2.0 * c_hat * c_hat / n as f64).sqrt();
    (c_hat - half, c_hat + half)
}

/// One evaluation of the profile likelihood at a fixed range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub rho: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub log_det: f64,
    pub quad: f64,
}

/// Profile likelihood in the range for fixed data, design and smoothness,
/// optionally with the correlation matrix tapered.
#[derive(Debug, Clone)]
pub struct ProfileLikelihood {
    z: DVector<f64>,
    distances: DMatrix<f64>,
    taper: Option<DMatrix<f64>>,
    nu: f64,
    min_distance: f64,
}

impl ProfileLikelihood {
    pub fn new(z: &Observations, design: &Design, nu: f64) -> Result<Self> {
        Self::build(z, design, nu, None)
    }

    pub fn tapered(z: &Observations, design: &Design, nu: f64, taper_range: f64) -> Result<Self> {
        check_positive("taper_range", taper_range)?;
        Self::build(z, design, nu, Some(taper_range))
    }

    fn build(z: &Observations, design: &Design, nu: f64, taper_range: Option<f64>) -> Result<Self> {
        check_positive("nu", nu)?;
        z.check_against(design)?;
        let distances = design.distance_matrix();
        let n = design.len();
        let mut min_distance = f64::INFINITY;
        for j in 0..n {
            for i in (j + 1)..n {
                min_distance = min_distance.min(distances[(i, j)]);
            }
        }
        let taper = taper_range.map(|range| distances.map(|h| wendland1(h / range)));
        Ok(Self {
            z: z.values().clone(),
            distances,
            taper,
            nu,
            min_distance,
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// The (possibly tapered) correlation matrix at `rho`.
    pub fn matrix(&self, rho: f64) -> Result<DMatrix<f64>> {
        check_positive("rho", rho)?;
        let mut m = correlation_from_distances(&self.distances, rho, self.nu)?;
        if let Some(t) = &self.taper {
            m.component_mul_assign(t);
        }
        Ok(m)
    }

    /// Log-determinant and `z' M^-1 z` at `rho`.
    fn log_det_and_quad(&self, rho: f64) -> Result<(f64, f64)> {
        check_positive("rho", rho)?;
        if self.min_distance / rho > UNDERFLOW_RATIO {
            // every off-diagonal correlation underflows to 0: the matrix is the identity
            return Ok((0.0, self.z.norm_squared()));
        }
        let factor = Factor::new(self.matrix(rho)?, rho)?;
        Ok((factor.log_det(), factor.quad_form(&self.z)))
    }

    pub fn evaluate(&self, rho: f64) -> Result<ProfilePoint> {
        let (log_det, quad) = self.log_det_and_quad(rho)?;
        let n = self.n() as f64;
        let sigma2 = quad / n;
        if !(sigma2 > 0.0) {
            return Err(Error::DegenerateObservations(
                "profile variance is zero (all observations are zero)".into(),
            ));
        }
        let loglik = -0.5 * n * (2.0 * PI * sigma2).ln() - 0.5 * log_det - 0.5 * n;
        Ok(ProfilePoint {
            rho,
            sigma2,
            loglik,
            log_det,
            quad,
        })
    }

    /// `z' M(rho)^-1 z / n`.
    pub fn sigma2(&self, rho: f64) -> Result<f64> {
        let (_, quad) = self.log_det_and_quad(rho)?;
        Ok(quad / self.n() as f64)
    }

    /// `z' M(rho)^-1 z / (n rho^(2 nu))`.
    pub fn c_hat(&self, rho: f64) -> Result<f64> {
        Ok(self.sigma2(rho)? / rho.powf(2.0 * self.nu))
    }

    /// Full log-likelihood at `(sigma2, rho)`.
    pub fn log_likelihood(&self, sigma2: f64, rho: f64) -> Result<f64> {
        check_positive("sigma2", sigma2)?;
        let (log_det, quad) = self.log_det_and_quad(rho)?;
        let n = self.n() as f64;
        Ok(-0.5 * n * (2.0 * PI * sigma2).ln() - 0.5 * log_det - quad / (2.0 * sigma2))
    }

    /// Maximizes over the range within the configured bounds; the mode is
    /// tapered when the likelihood is.
    pub fn fit(&self, config: &FitConfig) -> Result<FitResult> {
        let mode = if self.taper.is_some() {
            FitMode::TaperedMle
        } else {
            FitMode::Mle
        };
        self.maximize(config, mode)
    }

    fn maximize(&self, config: &FitConfig, mode: FitMode) -> Result<FitResult> {
        config.validate()?;
        if config.nu != self.nu {
            return Err(Error::Config(format!(
                "fit config nu {} differs from the likelihood's nu {}",
                config.nu, self.nu
            )));
        }
        let best = maximize_log_grid(
            |rho| self.evaluate(rho).ok().map(|p| p.loglik),
            config.rho_lower,
            config.rho_upper,
            config.grid_points,
            config.tolerance,
        )
        .ok_or(Error::AllFactorizationsFailed {
            lower: config.rho_lower,
            upper: config.rho_upper,
        })?;
        let point = self.evaluate(best.argmax)?;
        Ok(self.result(point, mode, self.n(), best.at_boundary, best.evaluations + 1))
    }

    fn result(
        &self,
        point: ProfilePoint,
        mode: FitMode,
        n_for_ci: usize,
        at_boundary: bool,
        evaluations: usize,
    ) -> FitResult {
        let c_hat = point.sigma2 / point.rho.powf(2.0 * self.nu);
        FitResult {
            mode,
            nu: self.nu,
            rho_hat: point.rho,
            sigma2_hat: point.sigma2,
            c_hat,
            loglik: point.loglik,
            ci_c: confidence_interval(c_hat, n_for_ci),
            n: self.n(),
            at_boundary,
            evaluations,
        }
    }
}

fn require_nonzero(z: &Observations) -> Result<()> {
    if z.is_zero() {
        Err(Error::DegenerateObservations("all observations are zero".into()))
    } else {
        Ok(())
    }
}

/// Log of the Gaussian likelihood
/// `-(n/2) log(2 pi sigma2) - (1/2) log|Gamma| - z' Gamma^-1 z / (2 sigma2)`.
pub fn log_likelihood(z: &Observations, design: &Design, params: &MaternParams) -> Result<f64> {
    ProfileLikelihood::new(z, design, params.nu())?.log_likelihood(params.sigma2(), params.rho())
}

/// `z' Gamma(rho)^-1 z / n`.
pub fn profile_sigma2(z: &Observations, design: &Design, rho: f64, nu: f64) -> Result<f64> {
    ProfileLikelihood::new(z, design, nu)?.sigma2(rho)
}

/// Log-likelihood maximized over the variance at fixed `rho`.
pub fn profile_loglik(z: &Observations, design: &Design, rho: f64, nu: f64) -> Result<f64> {
    require_nonzero(z)?;
    Ok(ProfileLikelihood::new(z, design, nu)?.evaluate(rho)?.loglik)
}

/// `c_hat(rho) = z' Gamma(rho)^-1 z / (n rho^(2 nu))`, non-increasing in `rho`.
pub fn microergodic_estimate(z: &Observations, design: &Design, rho: f64, nu: f64) -> Result<f64> {
    ProfileLikelihood::new(z, design, nu)?.c_hat(rho)
}

/// Joint maximum likelihood over `(0, inf) x [rho_lower, rho_upper]`.
pub fn fit_mle(z: &Observations, design: &Design, config: &FitConfig) -> Result<FitResult> {
    require_nonzero(z)?;
    ProfileLikelihood::new(z, design, config.nu)?.maximize(config, FitMode::Mle)
}

/// Variance estimate with the range fixed at `rho1`; the interval on `c` uses `n_for_ci`.
pub fn fit_fixed_rho(z: &Observations, design: &Design, rho1: f64, nu: f64, n_for_ci: usize) -> Result<FitResult> {
    require_nonzero(z)?;
    if n_for_ci == 0 {
        return Err(Error::domain("n_for_ci must be positive"));
    }
    let profile = ProfileLikelihood::new(z, design, nu)?;
    let point = profile.evaluate(rho1)?;
    Ok(profile.result(point, FitMode::FixedRho, n_for_ci, false, 1))
}

/// Maximum tapered likelihood: the correlation matrix is replaced by its
/// Schur product with a Wendland taper of range `taper_range`.
pub fn fit_tapered(z: &Observations, design: &Design, config: &FitConfig, taper_range: f64) -> Result<FitResult> {
    require_nonzero(z)?;
    ProfileLikelihood::tapered(z, design, config.nu, taper_range)?.maximize(config, FitMode::TaperedMle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{correlation_matrix, effective_range_to_rho};
    use crate::simulation::simulate_gp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn obs(v: &[f64]) -> Observations {
        Observations::new(v.to_vec()).unwrap()
    }

    fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Design {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        Design::from_rows(&rows).unwrap()
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn scalar_likelihood_examples() {
        let d = Design::from_rows(&[[0.2]]).unwrap();
        let ll = log_likelihood(&obs(&[0.0]), &d, &MaternParams::new(1.0, 0.3, 0.5).unwrap()).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-14);
        let ll = log_likelihood(&obs(&[2.0]), &d, &MaternParams::new(4.0, 0.3, 0.5).unwrap()).unwrap();
        let want = -0.5 * (8.0 * PI).ln() - 0.5;
        assert!((ll - want).abs() < 1e-14);
        assert!((want + 2.112_085_713_764_618).abs() < 1e-7);
        let pl = profile_loglik(&obs(&[2.0]), &d, 0.3, 0.5).unwrap();
        assert!((pl - want).abs() < 1e-14);
    }

    #[test]
    fn profile_sigma2_examples() {
        let d1 = Design::from_rows(&[[0.0]]).unwrap();
        assert!((profile_sigma2(&obs(&[2.0]), &d1, 1.0, 0.5).unwrap() - 4.0).abs() < 1e-15);
        let d2 = Design::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_eq!(profile_sigma2(&obs(&[0.0, 0.0]), &d2, 1.0, 0.5).unwrap(), 0.0);
        let r = (-1.0f64).exp();
        let oracle = 2.0 * (1.0 - r) / (1.0 - r * r) / 2.0;
        let got = profile_sigma2(&obs(&[1.0, 1.0]), &d2, 1.0, 0.5).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.731_058_6).abs() < 1e-7);
    }

    #[test]
    fn profile_forms_agree_and_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = random_design(&mut rng, 30, 2);
            let z = obs(&normals(&mut rng, 30));
            let rho = rng.random_range(0.02..0.5);
            let pl = ProfileLikelihood::new(&z, &d, 1.5).unwrap();
            let p = pl.evaluate(rho).unwrap();
            let direct = pl.log_likelihood(p.sigma2, rho).unwrap();
            assert!((p.loglik - direct).abs() < 1e-12 * p.loglik.abs().max(1.0));
            for k in 1..40 {
                let s2 = p.sigma2 * 0.1 * k as f64;
                assert!(pl.log_likelihood(s2, rho).unwrap() <= p.loglik + 1e-12);
            }
        }
    }

    #[test]
    fn profile_loglik_rejects_zero_data() {
        let d = Design::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(matches!(
            profile_loglik(&obs(&[0.0, 0.0]), &d, 1.0, 0.5),
            Err(Error::DegenerateObservations(_))
        ));
        assert!(matches!(
            fit_mle(&obs(&[0.0, 0.0]), &d, &FitConfig::new(0.5)),
            Err(Error::DegenerateObservations(_))
        ));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let d = Design::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(matches!(
            profile_sigma2(&obs(&[1.0]), &d, 1.0, 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn microergodic_examples() {
        assert_eq!(microergodic(1.0, 1.0, 2.3).unwrap(), 1.0);
        assert!((microergodic(2.0, 0.5, 0.5).unwrap() - 4.0).abs() < 1e-15);
        assert!((microergodic(1.0, 0.033_380_8, 0.5).unwrap() - 29.957).abs() < 1e-3);
        assert!(microergodic(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn interval_arithmetic() {
        let (lo, hi) = confidence_interval(1.0, 200);
        assert!((lo - 0.804).abs() < 1e-12 && (hi - 1.196).abs() < 1e-12);
        let (lo, hi) = confidence_interval(3.7, 57);
        assert!((hi - lo - 2.0 * CI_Z * (2.0 * 3.7 * 3.7 / 57.0f64).sqrt()).abs() < 1e-15);
    }

    fn simulated(rng: &mut ChaCha8Rng, n: usize, nu: f64, er: f64) -> (Design, Observations, f64) {
        let d = random_design(rng, n, 2);
        let rho = effective_range_to_rho(er, nu).unwrap();
        let params = MaternParams::new(1.0, rho, nu).unwrap();
        let z = simulate_gp(&d, &params, &normals(rng, n)).unwrap();
        (d, z, rho)
    }

    #[test]
    fn mle_beats_fresh_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (nu, er) in [(0.5, 0.3), (1.5, 0.3), (0.5, 1.0)] {
            let (d, z, rho0) = simulated(&mut rng, 120, nu, er);
            let config = FitConfig::new(nu).with_bounds(1e-3 * rho0, 15.0 * rho0);
            let fit = fit_mle(&z, &d, &config).unwrap();
            assert!(fit.rho_hat >= config.rho_lower && fit.rho_hat <= config.rho_upper);
            assert_eq!(fit.c_hat, fit.sigma2_hat / fit.rho_hat.powf(2.0 * nu));
            let pl = ProfileLikelihood::new(&z, &d, nu).unwrap();
            let grid = crate::optimize::log_grid(config.rho_lower, config.rho_upper, 200);
            let grid_max = grid
                .iter()
                .filter_map(|&r| pl.evaluate(r).ok())
                .map(|p| p.loglik)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(fit.loglik >= grid_max - 1e-6, "nu={nu} er={er}");

            // joint maximality over a local (sigma2, rho) grid
            for i in 0..20 {
                for j in 0..20 {
                    let s2 = fit.sigma2_hat * (0.8 + 0.02 * i as f64);
                    let r = fit.rho_hat * (0.8 + 0.02 * j as f64);
                    if let Ok(ll) = pl.log_likelihood(s2, r) {
                        assert!(ll <= fit.loglik + 1e-9);
                    }
                }
            }

            let fixed = fit_fixed_rho(&z, &d, fit.rho_hat, nu, fit.n).unwrap();
            assert!(((fixed.sigma2_hat - fit.sigma2_hat) / fit.sigma2_hat).abs() < 1e-12);
            assert!(((fixed.c_hat - fit.c_hat) / fit.c_hat).abs() < 1e-12);
            assert_eq!(fixed.mode, FitMode::FixedRho);
        }
    }

    #[test]
    fn c_hat_monotone_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(5..=30);
            let dim = rng.random_range(1..=3);
            let d = random_design(&mut rng, n, dim);
            let z = obs(&normals(&mut rng, n));
            let nu = [0.5, 1.0, 1.5, 2.5][rng.random_range(0..4)];
            let r1 = 10f64.powf(rng.random_range(-2.5..-0.5));
            let r2 = r1 * 10f64.powf(rng.random_range(0.0..1.0));
            let pl = ProfileLikelihood::new(&z, &d, nu).unwrap();
            let (c1, c2) = (pl.c_hat(r1), pl.c_hat(r2));
            if let (Ok(c1), Ok(c2)) = (c1, c2) {
                assert!(c2 <= c1 * (1.0 + 1e-9), "r1={r1} r2={r2} c1={c1} c2={c2}");
            }
        }
    }

    #[test]
    fn tapered_without_taper_matches_mle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, z, rho0) = simulated(&mut rng, 60, 0.5, 0.3);
        let config = FitConfig::new(0.5).with_bounds(0.01 * rho0, 15.0 * rho0);
        let a = fit_mle(&z, &d, &config).unwrap();
        let b = fit_tapered(&z, &d, &config, f64::INFINITY).unwrap();
        assert_eq!(a.rho_hat.to_bits(), b.rho_hat.to_bits());
        assert_eq!(a.sigma2_hat.to_bits(), b.sigma2_hat.to_bits());
        assert_eq!(a.c_hat.to_bits(), b.c_hat.to_bits());
        assert_eq!(b.mode, FitMode::TaperedMle);
    }

    #[test]
    fn tapered_single_point_matches_untapered() {
        let d = Design::from_rows(&[[0.4, 0.4]]).unwrap();
        let z = obs(&[1.3]);
        let config = FitConfig::new(1.5);
        let a = fit_mle(&z, &d, &config).unwrap();
        let b = fit_tapered(&z, &d, &config, 0.05).unwrap();
        assert_eq!(a.sigma2_hat, b.sigma2_hat);
        assert_eq!(a.c_hat, b.c_hat);
    }

    #[test]
    fn tapered_c_hat_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(5..=40);
            let d = random_design(&mut rng, n, 2);
            let z = obs(&normals(&mut rng, n));
            let nu = [0.5, 1.5][rng.random_range(0..2)];
            let pl = ProfileLikelihood::tapered(&z, &d, nu, rng.random_range(0.1..0.6)).unwrap();
            let r1 = 10f64.powf(rng.random_range(-2.0..-0.7));
            let r2 = r1 * rng.random_range(1.0..5.0);
            let (c1, c2) = (pl.c_hat(r1).unwrap(), pl.c_hat(r2).unwrap());
            assert!(c2 <= c1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn tapered_fit_recovers_microergodic_roughly() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (d, z, rho0) = simulated(&mut rng, 300, 0.5, 0.1);
        let c0 = 1.0 / rho0;
        let config = FitConfig::new(0.5).with_bounds(0.05 * rho0, 15.0 * rho0);
        let fit = fit_tapered(&z, &d, &config, 0.3).unwrap();
        assert!(((fit.c_hat - c0) / c0).abs() < 0.3, "{} vs {c0}", fit.c_hat);
    }

    #[test]
    fn fixed_rho_interval_uses_supplied_n() {
        let d = Design::from_rows(&[[0.0]]).unwrap();
        let fit = fit_fixed_rho(&obs(&[1.0]), &d, 1.0, 0.5, 200).unwrap();
        assert!((fit.c_hat - 1.0).abs() < 1e-15);
        assert!((fit.ci_c.0 - 0.804).abs() < 1e-12);
        assert!((fit.ci_c.1 - 1.196).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::new(0.5).with_bounds(1.0, 0.5).validate().is_err());
        assert!(FitConfig::new(-1.0).validate().is_err());
        let mut c = FitConfig::new(0.5);
        c.grid_points = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identity_shortcut_matches_factorization() {
        let d = Design::from_rows(&[[0.0], [0.3], [0.9]]).unwrap();
        let z = obs(&[0.5, -1.0, 2.0]);
        let pl = ProfileLikelihood::new(&z, &d, 0.5).unwrap();
        let tiny = 1e-6;
        let p = pl.evaluate(tiny).unwrap();
        let gamma = correlation_matrix(&d, tiny, 0.5).unwrap();
        let f = Factor::new(gamma.into_matrix(), tiny).unwrap();
        assert!((p.quad - f.quad_form(z.values())).abs() < 1e-14);
        assert_eq!(f.log_det(), p.log_det);
    }
}
