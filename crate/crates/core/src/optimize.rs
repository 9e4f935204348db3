//! Bounded one-dimensional maximization on a log scale: a coarse grid scan
//! followed by Brent's golden-section/parabolic search around the best node.

/// Outcome of [`maximize_log_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub argmax: f64,
    pub value: f64,
    pub evaluations: usize,
    pub at_boundary: bool,
}

/// `points` log-spaced values covering `[lower, upper]` inclusive.
pub fn log_grid(lower: f64, upper: f64, points: usize) -> Vec<f64> {
    assert!(lower > 0.0 && upper > lower && points >= 2);
    let (a, b) = (lower.ln(), upper.ln());
    let step = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|k| match k {
            0 => lower,
            k if k == points - 1 => upper,
            k => (a + step * k as f64).exp(),
        })
        .collect()
}

/// Maximizes `f` over `[lower, upper]`. `f` returns `None` where it cannot be
/// evaluated; those points are treated as `-inf`. Returns `None` when no
/// grid point could be evaluated. `rel_tol` is the relative tolerance on the
/// argument.
pub fn maximize_log_grid<F>(mut f: F, lower: f64, upper: f64, points: usize, rel_tol: f64) -> Option<Maximum>
where
    F: FnMut(f64) -> Option<f64>,
{
    let grid = log_grid(lower, upper, points.max(2));
    let mut evaluations = 0;
    let mut values = Vec::with_capacity(grid.len());
    for &x in &grid {
        evaluations += 1;
        values.push(f(x).filter(|v| v.is_finite()));
    }
    let (best_k, best_v) = values.iter().enumerate().filter_map(|(k, v)| v.map(|v| (k, v))).fold(
        None,
        |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((k, v)),
        },
    )?;

    let last = grid.len() - 1;
    let lo = grid[best_k.saturating_sub(1)].ln();
    let hi = grid[(best_k + 1).min(last)].ln();

    let mut neg = |t: f64| {
        evaluations += 1;
        match f(t.exp()) {
            Some(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let (t_best, neg_best) = brent_minimize(&mut neg, lo, hi, rel_tol.max(1e-15));

    let (argmax, value) = if -neg_best >= best_v {
        (t_best.exp().clamp(lower, upper), -neg_best)
    } else {
        (grid[best_k], best_v)
    };
    let at_boundary = argmax <= lower * (1.0 + 1e-6) || argmax >= upper * (1.0 - 1e-6);
    Some(Maximum {
        argmax,
        value,
        evaluations,
        at_boundary,
    })
}

/// Brent's method for a minimum of `f` on `[a, b]` with absolute tolerance
/// `tol` on the argument. Returns `(x, f(x))`.
pub fn brent_minimize<F>(f: &mut F, a: f64, b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 - sqrt 5) / 2
    const MAX_ITER: usize = 200;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..MAX_ITER {
        let mid = 0.5 * (a + b);
        let tol1 = f64::EPSILON.sqrt() * 1e-4 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < mid { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}
