//! Simple kriging under a mean-zero Matérn model, with the plug-in ("naive")
//! and true mean squared prediction errors of a possibly mis-specified range.

use crate::covariance::{
    check_positive, correlation_matrix, cross_correlation_matrix, cross_values, Design, Location, MaternParams,
};
use crate::error::{Error, Result};
use crate::estimation::Observations;
use crate::linalg::Factor;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingOutput {
    pub target: Location,
    pub z_hat: f64,
    /// Plug-in MSPE at the parameters used for prediction.
    pub naive_mspe: f64,
    /// MSPE under the generating model, when one is supplied.
    pub true_mspe: Option<f64>,
}

/// A factorized correlation matrix ready to produce kriging weights.
#[derive(Debug, Clone)]
pub struct Kriger {
    design: Design,
    rho: f64,
    nu: f64,
    factor: Factor,
}

impl Kriger {
    pub fn new(design: &Design, rho: f64, nu: f64) -> Result<Self> {
        let gamma = correlation_matrix(design, rho, nu)?;
        let factor = Factor::new(gamma.into_matrix(), rho)?;
        Ok(Self {
            design: design.clone(),
            rho,
            nu,
            factor,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    fn gamma(&self, s0: &Location) -> Result<DVector<f64>> {
        self.design.check_dim(s0)?;
        cross_values(s0, &self.design, self.rho, self.nu)
    }

    /// `Gamma^-1 gamma(s0)`.
    pub fn weights(&self, s0: &Location) -> Result<DVector<f64>> {
        Ok(self.factor.solve(&self.gamma(s0)?))
    }

    pub fn predict(&self, z: &Observations, s0: &Location) -> Result<f64> {
        z.check_against(&self.design)?;
        Ok(self.weights(s0)?.dot(z.values()))
    }

    /// `gamma' Gamma^-1 gamma`, computed as a squared whitened norm.
    pub fn explained(&self, s0: &Location) -> Result<f64> {
        Ok(self.factor.whiten(&self.gamma(s0)?).norm_squared())
    }

    /// `sigma2 (1 - gamma' Gamma^-1 gamma)`.
    pub fn naive_mspe(&self, s0: &Location, sigma2: f64) -> Result<f64> {
        check_positive("sigma2", sigma2)?;
        Ok(sigma2 * (1.0 - self.explained(s0)?).max(0.0))
    }

    /// Weights and explained variance for many targets at once.
    pub fn batch(&self, targets: &Design) -> Result<TargetBatch> {
        let cross = cross_correlation_matrix(&self.design, targets, self.rho, self.nu)?;
        let whitened = self.factor.whiten_matrix(&cross);
        let explained = whitened.column_iter().map(|c| c.norm_squared()).collect();
        let weights = self.factor.solve_matrix(&cross);
        Ok(TargetBatch { weights, explained })
    }
}

/// The generating model's matrices over a design and a target set.
#[derive(Debug, Clone)]
pub struct TruthMatrices {
    pub params: MaternParams,
    /// `Gamma_n(rho0)`.
    pub gamma: DMatrix<f64>,
    /// Column `j` is `gamma_n(rho0)` for target `j`.
    pub cross: DMatrix<f64>,
}

impl TruthMatrices {
    pub fn new(design: &Design, targets: &Design, params: MaternParams) -> Result<Self> {
        Ok(Self {
            params,
            gamma: correlation_matrix(design, params.rho(), params.nu())?.into_matrix(),
            cross: cross_correlation_matrix(design, targets, params.rho(), params.nu())?,
        })
    }
}

/// Kriging weights for a fixed design, range and target set.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    /// `n x m`; column `j` holds `Gamma^-1 gamma_j`.
    weights: DMatrix<f64>,
    /// `gamma_j' Gamma^-1 gamma_j` per target.
    explained: Vec<f64>,
}

impl TargetBatch {
    pub fn len(&self) -> usize {
        self.explained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explained.is_empty()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn explained(&self) -> &[f64] {
        &self.explained
    }

    pub fn predictions(&self, z: &DVector<f64>) -> DVector<f64> {
        self.weights.tr_mul(z)
    }

    pub fn naive_mspe(&self, sigma2: f64) -> Vec<f64> {
        self.explained.iter().map(|q| sigma2 * (1.0 - q).max(0.0)).collect()
    }

    /// True MSPE of each target's predictor under `truth`.
    pub fn true_mspe(&self, truth: &TruthMatrices) -> Vec<f64> {
        let spread = &truth.gamma * &self.weights;
        let sigma0 = truth.params.sigma2();
        (0..self.len())
            .map(|j| {
                let w = self.weights.column(j);
                let middle = w.dot(&truth.cross.column(j));
                let last = w.dot(&spread.column(j));
                sigma0 * (1.0 - 2.0 * middle + last).max(0.0)
            })
            .collect()
    }
}

/// `gamma(rho)' Gamma(rho)^-1 z`; independent of the variance.
pub fn krig_predict(z: &Observations, design: &Design, s0: &Location, rho: f64, nu: f64) -> Result<f64> {
    z.check_against(design)?;
    Kriger::new(design, rho, nu)?.predict(z, s0)
}

/// Plug-in MSPE `sigma2 (1 - gamma' Gamma^-1 gamma)`.
pub fn naive_mspe(design: &Design, s0: &Location, sigma2: f64, rho: f64, nu: f64) -> Result<f64> {
    Kriger::new(design, rho, nu)?.naive_mspe(s0, sigma2)
}

/// MSPE under `truth` of the kriging predictor built with range `rho_used`:
/// `sigma0^2 {1 - 2 w' gamma(rho0) + w' Gamma(rho0) w}`, `w = Gamma(rho)^-1 gamma(rho)`.
pub fn true_mspe(design: &Design, s0: &Location, rho_used: f64, truth: &MaternParams) -> Result<f64> {
    true_mspe_signed(design, s0, rho_used, truth, -2.0)
}

/// [`true_mspe`] with the coefficient of the middle term exposed, so
/// verification can run against a deliberately corrupted formula.
pub(crate) fn true_mspe_signed(
    design: &Design,
    s0: &Location,
    rho_used: f64,
    truth: &MaternParams,
    middle_coefficient: f64,
) -> Result<f64> {
    let used = Kriger::new(design, rho_used, truth.nu())?;
    let w = used.weights(s0)?;
    let gamma0 = cross_values(s0, design, truth.rho(), truth.nu())?;
    let big0 = correlation_matrix(design, truth.rho(), truth.nu())?.into_matrix();
    let last = w.dot(&(&big0 * &w));
    let value = 1.0 + middle_coefficient * w.dot(&gamma0) + last;
    Ok(truth.sigma2() * value.max(0.0))
}

/// Kriging output at each target with plug-in parameters, and the true MSPE
/// when the generating model is known.
pub fn krige(
    z: &Observations,
    design: &Design,
    targets: &Design,
    plug_in: &MaternParams,
    truth: Option<&MaternParams>,
) -> Result<Vec<KrigingOutput>> {
    z.check_against(design)?;
    let kriger = Kriger::new(design, plug_in.rho(), plug_in.nu())?;
    let batch = kriger.batch(targets)?;
    let preds = batch.predictions(z.values());
    let naive = batch.naive_mspe(plug_in.sigma2());
    let truth_mspe = match truth {
        Some(t) => {
            if t.nu() != plug_in.nu() {
                return Err(Error::domain("truth and plug-in models must share nu"));
            }
            Some(batch.true_mspe(&TruthMatrices::new(design, targets, *t)?))
        }
        None => None,
    };
    Ok(targets
        .locations()
        .iter()
        .enumerate()
        .map(|(j, t)| KrigingOutput {
            target: *t,
            z_hat: preds[j],
            naive_mspe: naive[j],
            true_mspe: truth_mspe.as_ref().map(|v| v[j]),
        })
        .collect())
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// `z_hat +/- z_{(1+level)/2} sqrt(mspe)`.
pub fn prediction_interval(z_hat: f64, naive_mspe: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level must lie in (0, 1), got {level}")));
    }
    if !(naive_mspe >= 0.0) {
        return Err(Error::domain(format!("mspe must be >= 0, got {naive_mspe}")));
    }
    let half = normal_quantile(0.5 * (1.0 + level))? * naive_mspe.sqrt();
    Ok((z_hat - half, z_hat + half))
}

/// Where the plug-in variance comes from in a naive-to-true ratio.
#[derive(Debug, Clone)]
pub enum VarianceSource {
    Fixed(f64),
    /// `sigma1^2 = sigma0^2 (rho_used / rho0)^(2 nu)`, which matches the
    /// microergodic parameter of the truth.
    MicroergodicMatched,
    /// `z_n' Gamma_n(rho_used)^-1 z_n / n` from a realization over the largest design.
    Profile(Observations),
}

#[derive(Debug, Clone)]
pub enum RatioKind {
    /// True MSPE at `rho_used` over the optimal MSPE at `rho0`.
    Efficiency,
    /// Plug-in MSPE at `(sigma2_used, rho_used)` over true MSPE at `rho_used`.
    NaiveToTrue(VarianceSource),
}

fn check_nested(designs: &[Design]) -> Result<()> {
    for pair in designs.windows(2) {
        let (small, big) = (&pair[0], &pair[1]);
        if small.len() >= big.len() || big.locations()[..small.len()] != *small.locations() {
            return Err(Error::InvalidDesign(
                "designs must be strictly increasing prefixes of one another".into(),
            ));
        }
    }
    Ok(())
}

fn plug_in_sigma2(source: &VarianceSource, design: &Design, rho_used: f64, truth: &MaternParams) -> Result<f64> {
    match source {
        VarianceSource::Fixed(s) => Ok(*s),
        VarianceSource::MicroergodicMatched => Ok(truth.sigma2() * (rho_used / truth.rho()).powf(2.0 * truth.nu())),
        VarianceSource::Profile(z) => {
            crate::estimation::profile_sigma2(&z.prefix(design.len())?, design, rho_used, truth.nu())
        }
    }
}

fn check_ratio_inputs(designs: &[Design], rho_used: f64, kind: &RatioKind) -> Result<()> {
    check_positive("rho_used", rho_used)?;
    check_nested(designs)?;
    if let (RatioKind::NaiveToTrue(VarianceSource::Profile(z)), Some(largest)) = (kind, designs.last()) {
        z.check_against(largest)?;
    }
    Ok(())
}

/// Evaluates a variance ratio at `s0` over an increasing sequence of nested
/// designs (each a prefix of the next). Returns `(n, ratio)` pairs.
pub fn variance_ratio_curve(
    designs: &[Design],
    s0: &Location,
    rho_used: f64,
    truth: &MaternParams,
    kind: &RatioKind,
) -> Result<Vec<(usize, f64)>> {
    check_ratio_inputs(designs, rho_used, kind)?;
    let Some(largest) = designs.last() else {
        return Ok(Vec::new());
    };
    largest.check_dim(s0)?;
    if largest.position(s0).is_some() {
        return Err(Error::InvalidDesign("target coincides with a design location".into()));
    }

    let mut out = Vec::with_capacity(designs.len());
    for design in designs {
        let true_used = true_mspe(design, s0, rho_used, truth)?;
        let ratio = match kind {
            RatioKind::Efficiency => true_used / naive_mspe(design, s0, truth.sigma2(), truth.rho(), truth.nu())?,
            RatioKind::NaiveToTrue(source) => {
                let sigma2 = plug_in_sigma2(source, design, rho_used, truth)?;
                naive_mspe(design, s0, sigma2, rho_used, truth.nu())? / true_used
            }
        };
        out.push((design.len(), ratio));
    }
    Ok(out)
}

/// [`variance_ratio_curve`] averaged over a set of targets, none of which may
/// coincide with a design location.
pub fn mean_variance_ratio_curve(
    designs: &[Design],
    targets: &Design,
    rho_used: f64,
    truth: &MaternParams,
    kind: &RatioKind,
) -> Result<Vec<(usize, f64)>> {
    check_ratio_inputs(designs, rho_used, kind)?;
    let Some(largest) = designs.last() else {
        return Ok(Vec::new());
    };
    if targets.dim() != largest.dim() {
        return Err(Error::DimensionMismatch {
            expected: largest.dim(),
            found: targets.dim(),
        });
    }
    if targets.locations().iter().any(|t| largest.position(t).is_some()) {
        return Err(Error::InvalidDesign("a target coincides with a design location".into()));
    }

    let mut out = Vec::with_capacity(designs.len());
    for design in designs {
        let used = Kriger::new(design, rho_used, truth.nu())?.batch(targets)?;
        let true_used = used.true_mspe(&TruthMatrices::new(design, targets, *truth)?);
        let numerators = match kind {
            RatioKind::Efficiency => true_used.clone(),
            RatioKind::NaiveToTrue(source) => used.naive_mspe(plug_in_sigma2(source, design, rho_used, truth)?),
        };
        let denominators = match kind {
            RatioKind::Efficiency => Kriger::new(design, truth.rho(), truth.nu())?
                .batch(targets)?
                .naive_mspe(truth.sigma2()),
            RatioKind::NaiveToTrue(_) => true_used,
        };
        let total: f64 = numerators.iter().zip(&denominators).map(|(a, b)| a / b).sum();
        out.push((design.len(), total / targets.len() as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::effective_range_to_rho;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn obs(v: &[f64]) -> Observations {
        Observations::new(v.to_vec()).unwrap()
    }

    fn loc(c: &[f64]) -> Location {
        Location::new(c).unwrap()
    }

    fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Design {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        Design::from_rows(&rows).unwrap()
    }

    #[test]
    fn scalar_examples() {
        let d = Design::from_rows(&[[0.0]]).unwrap();
        let s0 = loc(&[1.0]);
        let e = (-1.0f64).exp();
        assert!((krig_predict(&obs(&[2.0]), &d, &s0, 1.0, 0.5).unwrap() - 2.0 * e).abs() < 1e-15);
        let nm = naive_mspe(&d, &s0, 1.0, 1.0, 0.5).unwrap();
        assert!((nm - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((nm - 0.864_664_7).abs() < 1e-7);
        assert!((naive_mspe(&d, &s0, 2.0, 1.0, 0.5).unwrap() - 2.0 * nm).abs() < 1e-15);

        let truth = MaternParams::new(1.0, 1.0, 0.5).unwrap();
        let w = (-0.5f64).exp();
        let oracle = 1.0 - 2.0 * w * e + w * w;
        let tm = true_mspe(&d, &s0, 2.0, &truth).unwrap();
        assert!((tm - oracle).abs() < 1e-15);
        assert!((tm - 0.921_619_1).abs() < 1e-7);
    }

    #[test]
    fn far_target_reverts_to_zero() {
        let d = Design::from_rows(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]).unwrap();
        let z = obs(&[1.0, -2.0, 3.0]);
        let s0 = loc(&[5.0, 5.0]);
        let p = krig_predict(&z, &d, &s0, 0.1, 0.5).unwrap();
        assert!(p.abs() < 1e-15 * z.values().norm());
    }

    #[test]
    fn interpolation_at_design_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(&mut rng, 40, 2);
        let z = obs(&(0..40).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        let truth = MaternParams::new(1.3, 0.15, 1.5).unwrap();
        for i in [0, 7, 39] {
            let s0 = *d.location(i);
            let p = krig_predict(&z, &d, &s0, 0.1, 1.5).unwrap();
            assert!((p - z.values()[i]).abs() < 1e-10);
            assert!(naive_mspe(&d, &s0, 1.0, 0.1, 1.5).unwrap() < 1e-12);
            assert!(true_mspe(&d, &s0, 0.3, &truth).unwrap() < 1e-12);
        }
    }

    #[test]
    fn reduction_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = random_design(&mut rng, 30, 2);
            let s0 = loc(&[rng.random(), rng.random()]);
            let nu = [0.5, 1.5][rng.random_range(0..2)];
            let truth = MaternParams::new(rng.random_range(0.5..2.0), rng.random_range(0.05..0.3), nu).unwrap();
            let opt = true_mspe(&d, &s0, truth.rho(), &truth).unwrap();
            let naive = naive_mspe(&d, &s0, truth.sigma2(), truth.rho(), nu).unwrap();
            assert!((opt - naive).abs() < 1e-10 * truth.sigma2());
            for m in [0.2, 0.5, 0.9, 1.1, 2.0, 5.0] {
                let other = true_mspe(&d, &s0, m * truth.rho(), &truth).unwrap();
                assert!(other >= opt - 1e-12, "m={m}");
            }
        }
    }

    #[test]
    fn naive_mspe_bounded_by_variance_and_monotone_in_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = random_design(&mut rng, 60, 2);
        let s0 = loc(&[0.5, 0.5]);
        let mut prev = f64::INFINITY;
        for n in [1, 5, 10, 20, 40, 60] {
            let d = full.prefix(n).unwrap();
            let v = naive_mspe(&d, &s0, 2.0, 0.2, 1.5).unwrap();
            assert!((0.0..=2.0).contains(&v));
            assert!(v <= prev + 1e-10);
            prev = v;
        }
    }

    #[test]
    fn batch_matches_single_target_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_design(&mut rng, 25, 2);
        let targets = random_design(&mut rng, 10, 2);
        let z = obs(&(0..25).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        let plug = MaternParams::new(1.4, 0.2, 0.5).unwrap();
        let truth = MaternParams::new(1.0, 0.1, 0.5).unwrap();
        let out = krige(&z, &d, &targets, &plug, Some(&truth)).unwrap();
        for (j, o) in out.iter().enumerate() {
            let s0 = targets.location(j);
            assert!((o.z_hat - krig_predict(&z, &d, s0, 0.2, 0.5).unwrap()).abs() < 1e-12);
            assert!((o.naive_mspe - naive_mspe(&d, s0, 1.4, 0.2, 0.5).unwrap()).abs() < 1e-12);
            let t = true_mspe(&d, s0, 0.2, &truth).unwrap();
            assert!((o.true_mspe.unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn predictor_ignores_variance() {
        let d = Design::from_rows(&[[0.0], [0.4], [1.0]]).unwrap();
        let z = obs(&[0.3, -0.2, 1.1]);
        let s0 = loc(&[0.7]);
        let a = krige(
            &z,
            &d,
            &Design::new(vec![s0]).unwrap(),
            &MaternParams::new(1.0, 0.3, 1.5).unwrap(),
            None,
        )
        .unwrap();
        let b = krige(
            &z,
            &d,
            &Design::new(vec![s0]).unwrap(),
            &MaternParams::new(9.0, 0.3, 1.5).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(a[0].z_hat.to_bits(), b[0].z_hat.to_bits());
    }

    #[test]
    fn interval_examples() {
        assert_eq!(prediction_interval(1.5, 0.0, 0.9).unwrap(), (1.5, 1.5));
        let (lo, hi) = prediction_interval(0.0, 1.0, 0.95).unwrap();
        assert!((hi - 1.959_963_985).abs() < 1e-9 && (lo + 1.959_963_985).abs() < 1e-9);
        let (lo4, hi4) = prediction_interval(0.0, 4.0, 0.95).unwrap();
        assert!(((hi4 - lo4) - 2.0 * (hi - lo)).abs() < 1e-12);
        assert!(prediction_interval(0.0, 1.0, 1.0).is_err());
        assert!(prediction_interval(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ratio_curves() {
        let grids: Vec<Design> = [10usize, 40, 160]
            .iter()
            .map(|&n| {
                // nested 1-D designs: each is a prefix of the next
                let rows: Vec<[f64; 1]> = (0..n).map(|i| [van_der_corput(i + 1)]).collect();
                Design::from_rows(&rows).unwrap()
            })
            .collect();
        let rho0 = effective_range_to_rho(0.3, 0.5).unwrap();
        let truth = MaternParams::new(1.0, rho0, 0.5).unwrap();
        let s0 = loc(&[0.4321]);
        let same = variance_ratio_curve(&grids, &s0, rho0, &truth, &RatioKind::Efficiency).unwrap();
        assert!(same.iter().all(|&(_, r)| (r - 1.0).abs() < 1e-10));
        let eff = variance_ratio_curve(&grids, &s0, 2.0 * rho0, &truth, &RatioKind::Efficiency).unwrap();
        assert_eq!(eff.iter().map(|p| p.0).collect::<Vec<_>>(), vec![10, 40, 160]);
        assert!(eff.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert!(eff.last().unwrap().1 - 1.0 < 0.05, "{eff:?}");
        let matched = variance_ratio_curve(
            &grids,
            &s0,
            rho0,
            &truth,
            &RatioKind::NaiveToTrue(VarianceSource::MicroergodicMatched),
        )
        .unwrap();
        assert!(matched.iter().all(|&(_, r)| (r - 1.0).abs() < 1e-10));

        // sigma2 profiled from a true-model draw tracks the matched curve
        let rho_used = 2.0 * rho0;
        let largest = grids.last().unwrap();
        let deviates: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..largest.len()).map(|_| rng.sample(StandardNormal)).collect()
        };
        let z = crate::simulation::simulate_gp(largest, &truth, &deviates).unwrap();
        let matched = variance_ratio_curve(
            &grids,
            &s0,
            rho_used,
            &truth,
            &RatioKind::NaiveToTrue(VarianceSource::MicroergodicMatched),
        )
        .unwrap();
        let profiled = variance_ratio_curve(
            &grids,
            &s0,
            rho_used,
            &truth,
            &RatioKind::NaiveToTrue(VarianceSource::Profile(z)),
        )
        .unwrap();
        for (&(n, m), &(_, p)) in matched.iter().zip(&profiled) {
            assert!(
                (p - m).abs() <= 3.0 * (2.0 / n as f64).sqrt() * m,
                "n = {n}: {p} vs {m}"
            );
        }

        let shuffled = vec![grids[1].clone(), grids[0].clone()];
        assert!(variance_ratio_curve(&shuffled, &s0, rho0, &truth, &RatioKind::Efficiency).is_err());
    }

    #[test]
    fn mean_curve_averages_single_target_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let big = random_design(&mut rng, 40, 2);
        let designs = vec![big.prefix(10).unwrap(), big.prefix(25).unwrap(), big];
        let targets = random_design(&mut rng, 6, 2);
        let truth = MaternParams::new(1.3, 0.2, 1.5).unwrap();
        for kind in [
            RatioKind::Efficiency,
            RatioKind::NaiveToTrue(VarianceSource::MicroergodicMatched),
            RatioKind::NaiveToTrue(VarianceSource::Fixed(0.7)),
        ] {
            let mean = mean_variance_ratio_curve(&designs, &targets, 0.1, &truth, &kind).unwrap();
            let mut expected = [0.0; 3];
            for t in targets.locations() {
                let curve = variance_ratio_curve(&designs, t, 0.1, &truth, &kind).unwrap();
                for (e, (_, r)) in expected.iter_mut().zip(curve) {
                    *e += r / targets.len() as f64;
                }
            }
            for ((n, m), e) in mean.iter().zip(expected) {
                assert!((m - e).abs() < 1e-10 * e, "n = {n}: {m} vs {e}");
            }
        }
        let inside = designs[0].clone();
        assert!(mean_variance_ratio_curve(&designs, &inside, 0.1, &truth, &RatioKind::Efficiency).is_err());
    }

    fn van_der_corput(mut i: usize) -> f64 {
        let (mut v, mut denom) = (0.0, 1.0);
        while i > 0 {
            denom *= 2.0;
            v += (i % 2) as f64 / denom;
            i /= 2;
        }
        v
    }

    #[test]
    fn mutated_middle_term_is_detectable() {
        let d = Design::from_rows(&[[0.0], [0.5]]).unwrap();
        let s0 = loc(&[0.2]);
        let truth = MaternParams::new(1.0, 0.4, 0.5).unwrap();
        let good = true_mspe_signed(&d, &s0, 0.4, &truth, -2.0).unwrap();
        let bad = true_mspe_signed(&d, &s0, 0.4, &truth, 2.0).unwrap();
        let naive = naive_mspe(&d, &s0, 1.0, 0.4, 0.5).unwrap();
        assert!((good - naive).abs() < 1e-12);
        assert!((bad - naive).abs() > 0.1);
    }
}
