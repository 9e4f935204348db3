//! Built-in invariant suites run by `maternkit verify`. Each case draws from
//! its own seed so a failure can be replayed in isolation.

use crate::covariance::{correlation_matrix, matern_correlation_bessel, Design, Location, MaternParams};
use crate::error::Result;
use crate::estimation::{confidence_interval, fit_fixed_rho, Observations, ProfileLikelihood, CI_Z};
use crate::linalg::Factor;
use crate::prediction::{naive_mspe, true_mspe_signed, Kriger};
use crate::simulation::simulate_gp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random cases per suite.
    pub cases: usize,
    /// Flips the sign of the middle term of the true MSPE; every suite that
    /// depends on it should then fail.
    pub inject_mspe_sign_error: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            cases: 200,
            inject_mspe_sign_error: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFailure {
    pub case_seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<CaseFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<22} {:>5} cases, {} failed",
            self.name, self.cases, self.failures
        )?;
        if let Some(c) = &self.first_failure {
            write!(f, " (first: case seed {}: {})", c.case_seed, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

type Check = fn(&mut ChaCha8Rng, &VerifyOptions) -> Result<std::result::Result<(), String>>;

const SUITES: &[(&str, Check)] = &[
    ("c_hat_monotone", c_hat_monotone),
    ("closed_form_kernels", closed_forms),
    ("true_to_naive_mspe", reduction),
    ("interpolation", interpolation),
    ("mspe_optimality", optimality),
    ("ci_identity", ci_identity),
    ("profile_consistency", profile_consistency),
];

/// SplitMix64 finalizer; spreads `(seed, suite, case)` into a case seed.
fn case_seed(seed: u64, suite: usize, case: usize) -> u64 {
    let mut z = seed
        .wrapping_add((suite as u64) << 32)
        .wrapping_add(case as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_verify(options: &VerifyOptions) -> VerifyReport {
    let suites = SUITES
        .iter()
        .enumerate()
        .map(|(s, (name, check))| {
            let mut failures = 0;
            let mut first_failure = None;
            for case in 0..options.cases {
                let seed = case_seed(options.seed, s, case);
                let outcome = match check(&mut ChaCha8Rng::seed_from_u64(seed), options) {
                    Ok(r) => r,
                    Err(e) => Err(format!("error: {e}")),
                };
                if let Err(detail) = outcome {
                    failures += 1;
                    first_failure.get_or_insert(CaseFailure {
                        case_seed: seed,
                        detail,
                    });
                }
            }
            SuiteReport {
                name,
                cases: options.cases,
                failures,
                first_failure,
            }
        })
        .collect();
    VerifyReport { suites }
}

/// Replays one case of a named suite.
pub fn replay_case(suite: &str, case_seed: u64, options: &VerifyOptions) -> Option<std::result::Result<(), String>> {
    let (_, check) = SUITES.iter().find(|(name, _)| *name == suite)?;
    Some(match check(&mut ChaCha8Rng::seed_from_u64(case_seed), options) {
        Ok(r) => r,
        Err(e) => Err(format!("error: {e}")),
    })
}

const NUS: [f64; 4] = [0.5, 1.0, 1.5, 2.5];

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_location(rng: &mut ChaCha8Rng, d: usize) -> Location {
    let c: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    Location::new(&c).expect("finite coordinates")
}

/// A uniform design in the unit cube with a minimum separation, so the
/// correlation matrices stay well conditioned for moderate ranges.
fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Design {
    let sep = 0.3 / (n as f64).powf(1.0 / d as f64);
    let mut locations: Vec<Location> = Vec::with_capacity(n);
    while locations.len() < n {
        let l = random_location(rng, d);
        if locations.iter().all(|o| o.distance(&l) >= sep) {
            locations.push(l);
        }
    }
    Design::new(locations).expect("separated design")
}

struct Case {
    design: Design,
    nu: f64,
    rho: f64,
}

/// Random design, smoothness and a range short enough that `Gamma(rho)` keeps
/// every conditional variance above `1e-6`.
fn random_case(rng: &mut ChaCha8Rng, max_n: usize) -> Result<Case> {
    let n = rng.random_range(5..=max_n);
    let d = rng.random_range(1..=3);
    let nu = NUS[rng.random_range(0..NUS.len())];
    let design = random_design(rng, n, d);
    let mut rho = log_uniform(rng, 0.01, 0.5);
    loop {
        let factor = Factor::new(correlation_matrix(&design, rho, nu)?.into_matrix(), rho);
        let conditioned = factor.map(|f| {
            let l = f.l();
            (0..n).all(|i| l[(i, i)] * l[(i, i)] > 1e-6)
        });
        if matches!(conditioned, Ok(true)) {
            return Ok(Case { design, nu, rho });
        }
        rho *= 0.5;
    }
}

fn c_hat_monotone(rng: &mut ChaCha8Rng, _: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let rho2 = case.rho;
    let rho1 = rho2 * rng.random_range(0.05..1.0);
    let z = Observations::new(normals(rng, case.design.len()))?;
    let profile = ProfileLikelihood::new(&z, &case.design, case.nu)?;
    let (c1, c2) = (profile.c_hat(rho1)?, profile.c_hat(rho2)?);
    Ok(if c2 <= c1 * (1.0 + 1e-9) {
        Ok(())
    } else {
        Err(format!("c({rho2}) = {c2} > c({rho1}) = {c1} at nu = {}", case.nu))
    })
}

fn closed_forms(rng: &mut ChaCha8Rng, _: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let h = rng.random_range(0.0..5.0);
    let rho = log_uniform(rng, 0.01, 2.0);
    let x: f64 = h / rho;
    let forms = [
        (0.5, (-x).exp()),
        (1.5, (1.0 + x) * (-x).exp()),
        (2.5, (1.0 + x + x * x / 3.0) * (-x).exp()),
    ];
    for (nu, expected) in forms {
        let got = matern_correlation_bessel(h, rho, nu)?;
        if expected > 1e-290 && ((got - expected) / expected).abs() > 1e-10 {
            return Ok(Err(format!("nu = {nu}, h = {h}, rho = {rho}: {got} vs {expected}")));
        }
    }
    Ok(Ok(()))
}

fn truth_and_target(rng: &mut ChaCha8Rng, case: &Case) -> Result<(MaternParams, Location)> {
    let sigma2 = log_uniform(rng, 0.1, 10.0);
    let params = MaternParams::new(sigma2, case.rho, case.nu)?;
    Ok((params, random_location(rng, case.design.dim())))
}

fn reduction(rng: &mut ChaCha8Rng, options: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let (truth, s0) = truth_and_target(rng, &case)?;
    let coefficient = if options.inject_mspe_sign_error { 2.0 } else { -2.0 };
    let t = true_mspe_signed(&case.design, &s0, truth.rho(), &truth, coefficient)?;
    let n = naive_mspe(&case.design, &s0, truth.sigma2(), truth.rho(), truth.nu())?;
    Ok(if (t - n).abs() < 1e-10 * truth.sigma2() {
        Ok(())
    } else {
        Err(format!("true {t} vs naive {n}"))
    })
}

fn interpolation(rng: &mut ChaCha8Rng, _: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let z = Observations::new(normals(rng, case.design.len()))?;
    let kriger = Kriger::new(&case.design, case.rho, case.nu)?;
    let i = rng.random_range(0..case.design.len());
    let s0 = case.design.location(i);
    let z_hat = kriger.predict(&z, s0)?;
    let mspe = kriger.naive_mspe(s0, 1.0)?;
    let scale = z.values().amax().max(1.0);
    Ok(if (z_hat - z.values()[i]).abs() < 1e-7 * scale && mspe < 1e-8 {
        Ok(())
    } else {
        Err(format!("site {i}: z_hat {z_hat} vs {}, mspe {mspe}", z.values()[i]))
    })
}

fn optimality(rng: &mut ChaCha8Rng, options: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let (truth, s0) = truth_and_target(rng, &case)?;
    let rho_used = case.rho * log_uniform(rng, 0.2, 1.0);
    let coefficient = if options.inject_mspe_sign_error { 2.0 } else { -2.0 };
    let used = true_mspe_signed(&case.design, &s0, rho_used, &truth, coefficient)?;
    let best = true_mspe_signed(&case.design, &s0, truth.rho(), &truth, coefficient)?;
    let optimal = naive_mspe(&case.design, &s0, truth.sigma2(), truth.rho(), truth.nu())?;
    let tol = 1e-9 * truth.sigma2();
    Ok(if used >= best - tol && (best - optimal).abs() < tol {
        Ok(())
    } else {
        Err(format!(
            "true mspe at rho_used {used}, at rho0 {best}, optimal {optimal}"
        ))
    })
}

fn ci_identity(rng: &mut ChaCha8Rng, _: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let params = MaternParams::new(1.0, case.rho, case.nu)?;
    let z = simulate_gp(&case.design, &params, &normals(rng, case.design.len()))?;
    let n_for_ci = rng.random_range(1..1000);
    let fit = fit_fixed_rho(&z, &case.design, case.rho, case.nu, n_for_ci)?;
    let (lo, hi) = confidence_interval(fit.c_hat, n_for_ci);
    let half = CI_Z * fit.c_hat * (2.0 / n_for_ci as f64).sqrt();
    let mid_ok = (0.5 * (lo + hi) - fit.c_hat).abs() <= 1e-12 * fit.c_hat;
    let width_ok = (0.5 * (hi - lo) - half).abs() <= 1e-12 * fit.c_hat;
    let c_ok = (fit.c_hat - fit.sigma2_hat / case.rho.powf(2.0 * case.nu)).abs() <= 1e-12 * fit.c_hat;
    Ok(if mid_ok && width_ok && c_ok && fit.ci_c == (lo, hi) {
        Ok(())
    } else {
        Err(format!(
            "interval {:?} around {} with n {n_for_ci}",
            fit.ci_c, fit.c_hat
        ))
    })
}

fn profile_consistency(rng: &mut ChaCha8Rng, _: &VerifyOptions) -> Result<std::result::Result<(), String>> {
    let case = random_case(rng, 30)?;
    let z = Observations::new(normals(rng, case.design.len()))?;
    let profile = ProfileLikelihood::new(&z, &case.design, case.nu)?;
    let point = profile.evaluate(case.rho)?;
    let at_hat = profile.log_likelihood(point.sigma2, case.rho)?;
    if (at_hat - point.loglik).abs() > 1e-9 * point.loglik.abs().max(1.0) {
        return Ok(Err(format!("profile {} vs full {at_hat}", point.loglik)));
    }
    for k in 0..20 {
        let s = point.sigma2 * (0.1f64).powf(1.0 - k as f64 / 10.0);
        if profile.log_likelihood(s, case.rho)? > point.loglik + 1e-9 * point.loglik.abs().max(1.0) {
            return Ok(Err(format!("sigma2 = {s} beats the profile maximum")));
        }
    }
    Ok(Ok(()))
}
