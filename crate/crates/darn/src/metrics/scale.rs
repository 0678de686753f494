//! The joint relative-scale fit behind rs-MSE.
//!
//! `f(alpha) = ||A - alpha*Ahat||^2 + ||S - Shat/alpha||^2` is minimized over
//! `alpha > 0`. Stationary points are positive roots of the quartic
//! `a*alpha^4 - b*alpha^3 + e*alpha - d` with `a = <Ahat,Ahat>`,
//! `b = <A,Ahat>`, `e = <S,Shat>`, `d = <Shat,Shat>`. The solver scans a
//! log-spaced bracket for the global basin, golden-sections it down, then
//! polishes on the quartic; this stays robust when coefficients degenerate
//! and a closed-form root extraction would not.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

const LOG_LO: f64 = -6.907755278982137; // ln 1e-3
const LOG_HI: f64 = 6.907755278982137; // ln 1e3
const SCAN_POINTS: usize = 1024;

#[derive(Clone, Copy, Debug)]
pub struct RelativeScale {
    pub alpha: f64,
    /// Set when no interior minimum was found in the bracket; the returned
    /// alpha is the bracket-edge minimizer.
    pub at_bracket_edge: bool,
}

struct Quintuple {
    a: f64,
    b: f64,
    e: f64,
    d: f64,
    c0: f64,
}

fn dots<T: Scalar>(
    gt_albedo: &Image<T>,
    pred_albedo: &Image<T>,
    gt_shading: &Image<T>,
    pred_shading: &Image<T>,
) -> Result<Quintuple> {
    let same = |x: &Image<T>, y: &Image<T>| x.height() == y.height() && x.width() == y.width();
    if !same(gt_albedo, pred_albedo) || !same(gt_shading, pred_shading) || !same(gt_albedo, gt_shading)
    {
        return Err(Error::shape("relative scale: image sizes differ"));
    }
    let (mut a, mut b, mut e, mut d, mut c0) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&g, &p) in gt_albedo.data().iter().zip(pred_albedo.data()) {
        let (g, p) = (g.as_f64(), p.as_f64());
        a += p * p;
        b += g * p;
        c0 += g * g;
    }
    for (&g, &p) in gt_shading.data().iter().zip(pred_shading.data()) {
        let (g, p) = (g.as_f64(), p.as_f64());
        d += p * p;
        e += g * p;
        c0 += g * g;
    }
    Ok(Quintuple { a, b, e, d, c0 })
}

impl Quintuple {
    fn f(&self, alpha: f64) -> f64 {
        self.a * alpha * alpha - 2.0 * self.b * alpha + self.c0 - 2.0 * self.e / alpha
            + self.d / (alpha * alpha)
    }

    fn quartic(&self, alpha: f64) -> f64 {
        ((self.a * alpha - self.b) * alpha * alpha + self.e) * alpha - self.d
    }

    fn quartic_deriv(&self, alpha: f64) -> f64 {
        (4.0 * self.a * alpha - 3.0 * self.b) * alpha * alpha + self.e
    }
}

fn golden_section(q: &Quintuple, mut lo: f64, mut hi: f64) -> f64 {
    // Minimize f(exp(t)) over t in [lo, hi] to an interval width of 1e-10.
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut t1 = hi - INV_PHI * (hi - lo);
    let mut t2 = lo + INV_PHI * (hi - lo);
    let mut f1 = q.f(t1.exp());
    let mut f2 = q.f(t2.exp());
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = t2;
            t2 = t1;
            f2 = f1;
            t1 = hi - INV_PHI * (hi - lo);
            f1 = q.f(t1.exp());
        } else {
            lo = t1;
            t1 = t2;
            f1 = f2;
            t2 = lo + INV_PHI * (hi - lo);
            f2 = q.f(t2.exp());
        }
    }
    0.5 * (lo + hi)
}

/// Solves for the single scale that best reconciles both predictions with
/// the ground truth under `(alpha*Ahat, Shat/alpha)`.
pub fn solve_relative_scale<T: Scalar>(
    gt_albedo: &Image<T>,
    pred_albedo: &Image<T>,
    gt_shading: &Image<T>,
    pred_shading: &Image<T>,
) -> Result<RelativeScale> {
    let q = dots(gt_albedo, pred_albedo, gt_shading, pred_shading)?;
    if q.a == 0.0 || q.d == 0.0 {
        return Err(Error::Degenerate(
            "relative scale needs non-zero predictions for both components".into(),
        ));
    }

    // Coarse scan for the global basin.
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..SCAN_POINTS {
        let t = LOG_LO + (LOG_HI - LOG_LO) * i as f64 / (SCAN_POINTS - 1) as f64;
        let v = q.f(t.exp());
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }
    let at_bracket_edge = best_i == 0 || best_i == SCAN_POINTS - 1;
    let step = (LOG_HI - LOG_LO) / (SCAN_POINTS - 1) as f64;
    let lo = LOG_LO + step * best_i.saturating_sub(1) as f64;
    let hi = (LOG_LO + step * (best_i + 1) as f64).min(LOG_HI);
    let mut alpha = golden_section(&q, lo, hi).exp();

    // Newton polish on the stationarity quartic.
    let mut polished = alpha;
    for _ in 0..50 {
        let deriv = q.quartic_deriv(polished);
        if deriv == 0.0 {
            break;
        }
        let step = q.quartic(polished) / deriv;
        let next = polished - step;
        if !(1e-4..=1e4).contains(&next) {
            break;
        }
        polished = next;
        if step.abs() <= 1e-15 * polished.abs().max(1.0) {
            break;
        }
    }
    if polished > 0.0 && q.f(polished) <= q.f(alpha) {
        alpha = polished;
    }
    Ok(RelativeScale {
        alpha,
        at_bracket_edge,
    })
}

/// `(||A - alpha*Ahat||^2 + ||S - Shat/alpha||^2) / (2N)` at the solved
/// alpha, with `N` the pixel count (channels folded into the norm).
pub fn rs_mse<T: Scalar>(
    gt_albedo: &Image<T>,
    pred_albedo: &Image<T>,
    gt_shading: &Image<T>,
    pred_shading: &Image<T>,
) -> Result<f64> {
    let alpha = solve_relative_scale(gt_albedo, pred_albedo, gt_shading, pred_shading)?.alpha;
    // Direct residual evaluation avoids the cancellation of the quadratic
    // form near a perfect fit.
    let mut acc = 0.0;
    for (&g, &p) in gt_albedo.data().iter().zip(pred_albedo.data()) {
        let r = g.as_f64() - alpha * p.as_f64();
        acc += r * r;
    }
    for (&g, &p) in gt_shading.data().iter().zip(pred_shading.data()) {
        let r = g.as_f64() - p.as_f64() / alpha;
        acc += r * r;
    }
    Ok(acc / (2.0 * gt_albedo.pixels() as f64))
}
