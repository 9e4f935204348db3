//! Matérn correlation, its spectral density, correlation matrices over
//! designs, the Wendland taper, and effective-range inversion.

use crate::bessel::bessel_k_scaled;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};

/// Beyond this scaled distance `exp(-h/rho)` underflows and the correlation is 0.
pub const UNDERFLOW_RATIO: f64 = 705.0;

/// Correlation level that defines the effective range.
pub const EFFECTIVE_RANGE_LEVEL: f64 = 0.05;

/// Marginal variance, range and smoothness of a Matérn covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    sigma2: f64,
    rho: f64,
    nu: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, rho: f64, nu: f64) -> Result<Self> {
        check_positive("sigma2", sigma2)?;
        check_positive("rho", rho)?;
        check_positive("nu", nu)?;
        Ok(Self { sigma2, rho, nu })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `sigma2 / rho^(2 nu)`.
    pub fn microergodic(&self) -> f64 {
        self.sigma2 / self.rho.powf(2.0 * self.nu)
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive, got {value}")))
    }
}

/// A point in 1, 2 or 3 dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    coords: [f64; 3],
    dim: usize,
}

impl Location {
    pub fn new(coords: &[f64]) -> Result<Self> {
        let dim = coords.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::domain(format!(
                "locations must have 1, 2 or 3 coordinates, got {dim}"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("location coordinates must be finite"));
        }
        let mut buf = [0.0; 3];
        buf[..dim].copy_from_slice(coords);
        Ok(Self { coords: buf, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    /// Euclidean distance; both points must share a dimension.
    pub fn distance(&self, other: &Location) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut acc = 0.0;
        for k in 0..self.dim {
            let diff = self.coords[k] - other.coords[k];
            acc += diff * diff;
        }
        acc.sqrt()
    }
}

/// An ordered set of distinct locations sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    locations: Vec<Location>,
    dim: usize,
}

impl Design {
    /// Validates a shared dimension and pairwise distinctness.
    pub fn new(locations: Vec<Location>) -> Result<Self> {
        let design = Self::from_locations_unchecked(locations)?;
        let n = design.locations.len();
        for i in 0..n {
            for j in 0..i {
                if design.locations[i].distance(&design.locations[j]) == 0.0 {
                    return Err(Error::InvalidDesign(format!("locations {j} and {i} coincide")));
                }
            }
        }
        Ok(design)
    }

    /// Checks dimensions only. Callers guarantee distinctness, e.g. for
    /// subsets of an already validated design.
    pub(crate) fn from_locations_unchecked(locations: Vec<Location>) -> Result<Self> {
        let Some(first) = locations.first() else {
            return Err(Error::InvalidDesign("design has no locations".into()));
        };
        let dim = first.dim();
        if let Some(bad) = locations.iter().find(|l| l.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { locations, dim })
    }

    /// Convenience constructor from coordinate rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let locations = rows
            .iter()
            .map(|r| Location::new(r.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(locations)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn location(&self, i: usize) -> &Location {
        &self.locations[i]
    }

    /// The design restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Design> {
        let mut seen = vec![false; self.len()];
        let mut locations = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() || seen[i] {
                return Err(Error::InvalidDesign(format!(
                    "subset index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
            locations.push(self.locations[i]);
        }
        Design::from_locations_unchecked(locations)
    }

    /// The first `n` locations.
    pub fn prefix(&self, n: usize) -> Result<Design> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidDesign(format!(
                "prefix of length {n} from a design of {}",
                self.len()
            )));
        }
        Design::from_locations_unchecked(self.locations[..n].to_vec())
    }

    /// Concatenation; the caller asserts the union is still distinct.
    pub fn concat(&self, other: &Design) -> Result<Design> {
        let mut locations = self.locations.clone();
        locations.extend_from_slice(&other.locations);
        Design::from_locations_unchecked(locations)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in 0..i {
                best = best.min(self.locations[i].distance(&self.locations[j]));
            }
        }
        best
    }

    /// Index of a location coinciding exactly with `s0`, if any.
    pub fn position(&self, s0: &Location) -> Option<usize> {
        self.locations.iter().position(|l| l.coords() == s0.coords())
    }

    pub(crate) fn check_dim(&self, s0: &Location) -> Result<()> {
        if s0.dim() == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found: s0.dim(),
            })
        }
    }

    /// Symmetric matrix of pairwise distances.
    pub fn distance_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let d = self.locations[i].distance(&self.locations[j]);
                out[(i, j)] = d;
                out[(j, i)] = d;
            }
        }
        out
    }
}

fn check_kernel_args(h: f64, rho: f64, nu: f64) -> Result<()> {
    if !(h >= 0.0) {
        return Err(Error::domain(format!("distance must be >= 0, got {h}")));
    }
    check_positive("rho", rho)?;
    check_positive("nu", nu)
}

/// Closed forms for the half-integer orders the study uses.
#[inline]
fn closed_form(x: f64, nu: f64) -> Option<f64> {
    if nu == 0.5 {
        Some((-x).exp())
    } else if nu == 1.5 {
        Some((1.0 + x) * (-x).exp())
    } else if nu == 2.5 {
        Some((1.0 + x + x * x / 3.0) * (-x).exp())
    } else {
        None
    }
}

/// Kernel evaluation on scaled distance `x = h / rho`, arguments pre-validated.
#[inline]
pub(crate) fn correlation_scaled(x: f64, nu: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(1.0);
    }
    if x > UNDERFLOW_RATIO {
        return Ok(0.0);
    }
    match closed_form(x, nu) {
        Some(v) => Ok(v),
        None => bessel_path(x, nu),
    }
}

fn bessel_path(x: f64, nu: f64) -> Result<f64> {
    // log of x^nu K_nu(x) / (Gamma(nu) 2^(nu-1)), with K_nu(x) = e^-x * scaled.
    let scaled = bessel_k_scaled(nu, x)?;
    if !scaled.is_finite() {
        // x^-nu overflowed: the argument is so small the correlation is 1 to working precision.
        return Ok(1.0);
    }
    let log_value = nu * x.ln() + scaled.ln() - x - ln_gamma(nu) - (nu - 1.0) * LN_2;
    Ok(log_value.exp().min(1.0))
}

/// Matérn correlation `K(h; rho, nu)`, equal to 1 at `h = 0`.
///
/// Orders 0.5, 1.5 and 2.5 use their elementary closed forms; other orders go
/// through the modified Bessel function of the second kind.
pub fn matern_correlation(h: f64, rho: f64, nu: f64) -> Result<f64> {
    check_kernel_args(h, rho, nu)?;
    correlation_scaled(h / rho, nu)
}

/// As [`matern_correlation`] but always through the Bessel-function route,
/// even for half-integer orders.
pub fn matern_correlation_bessel(h: f64, rho: f64, nu: f64) -> Result<f64> {
    check_kernel_args(h, rho, nu)?;
    let x = h / rho;
    if x == 0.0 {
        Ok(1.0)
    } else if x > UNDERFLOW_RATIO {
        Ok(0.0)
    } else {
        bessel_path(x, nu)
    }
}

/// Spectral density of the Matérn correlation in `d` dimensions:
/// `Gamma(nu + d/2) / (pi^(d/2) Gamma(nu)) * rho^(-2 nu) * (rho^-2 + w^2)^-(nu + d/2)`.
pub fn matern_spectral_density(omega_norm: f64, rho: f64, nu: f64, d: usize) -> Result<f64> {
    if !(omega_norm >= 0.0) || !omega_norm.is_finite() {
        return Err(Error::domain(format!(
            "frequency norm must be finite and >= 0, got {omega_norm}"
        )));
    }
    check_positive("rho", rho)?;
    check_positive("nu", nu)?;
    if !(1..=3).contains(&d) {
        return Err(Error::domain(format!("dimension must be 1, 2 or 3, got {d}")));
    }
    let half_d = d as f64 / 2.0;
    let a = nu + half_d;
    let log_norm = ln_gamma(a) - half_d * PI.ln() - ln_gamma(nu);
    let log_value = log_norm - 2.0 * nu * rho.ln() - a * (rho.powi(-2) + omega_norm * omega_norm).ln();
    Ok(log_value.exp())
}

/// Wendland-1 taper `(1 - t)_+^4 (4t + 1)` with `t = h / taper_range`;
/// positive definite in up to three dimensions.
pub fn taper_correlation(h: f64, taper_range: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::domain(format!("distance must be >= 0, got {h}")));
    }
    check_positive("taper_range", taper_range)?;
    Ok(wendland1(h / taper_range))
}

#[inline]
pub(crate) fn wendland1(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let u = 1.0 - t;
        let u2 = u * u;
        u2 * u2 * (4.0 * t + 1.0)
    }
}

/// The `rho` at which the correlation at distance `er` equals `level`
/// (0.05 by convention), by bisection on `log rho`.
pub fn effective_range_to_rho_at(er: f64, nu: f64, level: f64) -> Result<f64> {
    check_positive("effective range", er)?;
    check_positive("nu", nu)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level must lie in (0, 1), got {level}")));
    }
    // The correlation at fixed h increases strictly with rho.
    let at = |rho: f64| correlation_scaled(er / rho, nu);
    let mut lo = er;
    let mut hi = er;
    let mut expansions = 0;
    while at(lo)? >= level {
        lo *= 0.5;
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::Convergence("effective-range bracket (lower)".into()));
        }
    }
    while at(hi)? <= level {
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::Convergence("effective-range bracket (upper)".into()));
        }
    }
    for _ in 0..400 {
        if hi - lo <= 1e-10 * lo {
            return Ok(0.5 * (lo + hi));
        }
        let mid = (lo * hi).sqrt();
        if at(mid)? < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence("effective-range bisection".into()))
}

/// [`effective_range_to_rho_at`] at the 0.05 level.
pub fn effective_range_to_rho(er: f64, nu: f64) -> Result<f64> {
    effective_range_to_rho_at(er, nu, EFFECTIVE_RANGE_LEVEL)
}

/// `Gamma_n(rho)`: unit-diagonal Matérn correlation matrix over a design.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    rho: f64,
    nu: f64,
}

impl CorrelationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Schur product with the Wendland taper matrix over the same design.
    pub fn tapered(&self, design: &Design, taper_range: f64) -> Result<CorrelationMatrix> {
        check_positive("taper_range", taper_range)?;
        if design.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: design.len(),
            });
        }
        let mut matrix = self.matrix.clone();
        let n = design.len();
        for j in 0..n {
            for i in (j + 1)..n {
                let t = wendland1(design.location(i).distance(design.location(j)) / taper_range);
                matrix[(i, j)] *= t;
                matrix[(j, i)] *= t;
            }
        }
        Ok(CorrelationMatrix {
            matrix,
            rho: self.rho,
            nu: self.nu,
        })
    }
}

/// Fills a symmetric correlation matrix from precomputed distances.
pub(crate) fn correlation_from_distances(distances: &DMatrix<f64>, rho: f64, nu: f64) -> Result<DMatrix<f64>> {
    let n = distances.nrows();
    let mut out = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = correlation_scaled(distances[(i, j)] / rho, nu)?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

pub fn correlation_matrix(design: &Design, rho: f64, nu: f64) -> Result<CorrelationMatrix> {
    check_positive("rho", rho)?;
    check_positive("nu", nu)?;
    let n = design.len();
    let mut matrix = DMatrix::identity(n, n);
    for j in 0..n {
        let sj = design.location(j);
        for i in (j + 1)..n {
            let v = correlation_scaled(design.location(i).distance(sj) / rho, nu)?;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(CorrelationMatrix { matrix, rho, nu })
}

/// `gamma_n(rho)`: correlations between `s0` and every design location.
#[derive(Debug, Clone)]
pub struct CrossCorrelationVector {
    values: DVector<f64>,
    target: Location,
}

impl CrossCorrelationVector {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn target(&self) -> &Location {
        &self.target
    }
}

pub fn cross_correlation(s0: &Location, design: &Design, rho: f64, nu: f64) -> Result<CrossCorrelationVector> {
    check_positive("rho", rho)?;
    check_positive("nu", nu)?;
    design.check_dim(s0)?;
    let values = cross_values(s0, design, rho, nu)?;
    Ok(CrossCorrelationVector { values, target: *s0 })
}

pub(crate) fn cross_values(s0: &Location, design: &Design, rho: f64, nu: f64) -> Result<DVector<f64>> {
    let mut values = DVector::zeros(design.len());
    for (i, loc) in design.locations().iter().enumerate() {
        values[i] = correlation_scaled(s0.distance(loc) / rho, nu)?;
    }
    Ok(values)
}

/// `n x m` matrix whose column `j` is the cross-correlation vector of `targets[j]`.
pub fn cross_correlation_matrix(design: &Design, targets: &Design, rho: f64, nu: f64) -> Result<DMatrix<f64>> {
    check_positive("rho", rho)?;
    check_positive("nu", nu)?;
    if design.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            expected: design.dim(),
            found: targets.dim(),
        });
    }
    let n = design.len();
    let mut out = DMatrix::zeros(n, targets.len());
    for (j, t) in targets.locations().iter().enumerate() {
        let mut col = out.column_mut(j);
        for i in 0..n {
            col[i] = correlation_scaled(t.distance(design.location(i)) / rho, nu)?;
        }
    }
    Ok(out)
}
