//! Modified Bessel function of the second kind, `K_nu(x)`, for real order.
//!
//! The order is split as `nu = mu + k` with `|mu| <= 1/2`. `K_mu` and
//! `K_{mu+1}` come from Temme's series for `x < 2` and from Steed's
//! continued fraction otherwise; forward recurrence in the order then
//! reaches `K_nu`, which is stable for the second-kind function.

use crate::error::{Error, Result};
use std::f64::consts::PI;

const MAX_ITER: usize = 10_000;
const SERIES_CUTOFF: f64 = 2.0;

/// Power-series coefficients of `1/Gamma(z) = sum_k C[k-1] z^k`.
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Temme's auxiliary gamma quantities for `|mu| <= 1/2`:
/// `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Gamma(1+x) = sum_{k>=1} C_k x^(k-1); split into even and odd powers of x
    // so that gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu) has no cancellation.
    let mut even = 0.0; // sum over odd k of C_k mu^(k-1)
    let mut odd = 0.0; // sum over even k of C_k mu^(k-2)
    for (idx, &c) in RECIP_GAMMA.iter().enumerate().rev() {
        let k = idx + 1;
        if k % 2 == 1 {
            even = even * mu * mu + c;
        } else {
            odd = odd * mu * mu + c;
        }
    }
    let gam1 = -odd;
    let gam2 = even;
    let gampl = even + mu * odd;
    let gammi = even - mu * odd;
    (gam1, gam2, gampl, gammi)
}

/// Returns `(e^x K_mu(x), e^x K_{mu+1}(x))` for `|mu| <= 1/2`, `x > 0`.
fn scaled_pair(mu: f64, x: f64) -> Result<(f64, f64)> {
    if x < SERIES_CUTOFF {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < f64::EPSILON {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < f64::EPSILON { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu * mu);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * f64::EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence("Bessel K series".into()));
        }
        let scale = x.exp();
        Ok((sum * scale, sum1 * (2.0 / x) * scale))
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < f64::EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence("Bessel K continued fraction".into()));
        }
        let h = a1 * h;
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) / x;
        Ok((kmu, k1))
    }
}

/// Exponentially scaled `e^x K_nu(x)` for `nu >= 0`, `x > 0`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::domain(format!("Bessel order must be >= 0, got {nu}")));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!(
            "Bessel argument must be positive and finite, got {x}"
        )));
    }
    let steps = (nu + 0.5).floor();
    let mu = nu - steps;
    let (mut k_lo, mut k_hi) = scaled_pair(mu, x)?;
    let two_over_x = 2.0 / x;
    for i in 1..=(steps as usize) {
        let next = (mu + i as f64) * two_over_x * k_hi + k_lo;
        k_lo = k_hi;
        k_hi = next;
    }
    Ok(k_lo)
}

/// `K_nu(x)`; underflows to zero for large `x`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)? * (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`, trapezoid rule.
    /// The integrand decays doubly exponentially, so the rule converges fast.
    fn integral_oracle(nu: f64, x: f64) -> f64 {
        let step: f64 = 1e-3;
        let mut sum = 0.5 * (-x).exp();
        let mut t = step;
        loop {
            let term = (-x * t.cosh()).exp() * (nu * t).cosh();
            sum += term;
            if term < 1e-300 || term < sum * 1e-19 {
                break;
            }
            t += step;
        }
        sum * step
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn half_integer_orders_match_elementary_forms() {
        for &x in &[1e-6, 0.01, 0.3, 1.0, 1.999, 2.0, 5.0, 30.0, 200.0] {
            let base = (PI / (2.0 * x)).sqrt();
            assert!(rel(bessel_k_scaled(0.5, x).unwrap(), base) < 1e-13, "x={x}");
            assert!(
                rel(bessel_k_scaled(1.5, x).unwrap(), base * (1.0 + 1.0 / x)) < 1e-13,
                "x={x}"
            );
            assert!(
                rel(bessel_k_scaled(2.5, x).unwrap(), base * (1.0 + 3.0 / x + 3.0 / (x * x))) < 1e-13,
                "x={x}"
            );
        }
    }

    #[test]
    fn agrees_with_integral_representation() {
        for &nu in &[0.0, 0.1, 0.37, 1.0, 1.25, 2.0, 3.7, 6.2] {
            for &x in &[0.05, 0.5, 1.5, 2.5, 7.0, 25.0] {
                let got = bessel_k(nu, x).unwrap();
                let want = integral_oracle(nu, x);
                assert!(rel(got, want) < 1e-10, "nu={nu} x={x} got={got} want={want}");
            }
        }
    }

    #[test]
    fn integer_order_reference_values() {
        // Abramowitz & Stegun table 9.8.
        assert!(rel(bessel_k(0.0, 1.0).unwrap(), 0.421_024_438_240_708_3) < 1e-14);
        assert!(rel(bessel_k(1.0, 1.0).unwrap(), 0.601_907_230_197_234_6) < 1e-14);
        assert!(rel(bessel_k(1.0, 2.0).unwrap(), 0.139_865_881_816_522_4) < 1e-14);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_k(-1.0, 1.0).is_err());
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, f64::NAN).is_err());
    }
}
