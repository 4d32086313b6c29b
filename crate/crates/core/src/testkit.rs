//! Independent oracles: dense grid minimization, log-log slope fits and a
//! plain gradient-descent reference minimizer.
//!
//! These deliberately avoid the code paths they are used to check.

use crate::error::{Error, Result};
use crate::point::Point;
use crate::problems::ProblemSpec;

/// Evaluates `f` at `n` uniform points of `[lo, hi]` and returns the first
/// minimizing point with its value.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<(f64, f64)> {
    if !(lo < hi) || n < 2 {
        return Err(Error::Oracle(format!(
            "grid_min needs lo < hi and n >= 2 (got [{lo}, {hi}], n = {n})"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f64::INFINITY);
    for i in 0..n {
        let r = if i == n - 1 { hi } else { lo + i as f64 * step };
        let v = f(r);
        if !v.is_finite() {
            return Err(Error::Oracle(format!("non-finite value {v} at {r}")));
        }
        if v < best.1 {
            best = (r, v);
        }
    }
    Ok(best)
}

/// [`grid_min`] with `n` points followed by `zooms` grids of `zoom_n`
/// points, each over the two cells around the previous best point.
/// Resolves kinked minima that a single grid only brackets to within one
/// cell.
pub fn zoomed_grid_min(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
    zoom_n: usize,
    zooms: usize,
) -> Result<(f64, f64)> {
    let mut best = grid_min(&f, lo, hi, n)?;
    let mut cell = (hi - lo) / (n - 1) as f64;
    for _ in 0..zooms {
        let (a, b) = ((best.0 - cell).max(lo), (best.0 + cell).min(hi));
        if !(a < b) {
            break;
        }
        let next = grid_min(&f, a, b, zoom_n)?;
        if next.1 < best.1 {
            best = next;
        }
        cell = (b - a) / (zoom_n - 1) as f64;
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln T, ln value)`.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::Oracle(format!(
            "slope_fit needs >= 3 points, got {}",
            points.len()
        )));
    }
    if let Some((t, v)) = points.iter().find(|(t, v)| !(*t > 0.0) || !(*v > 0.0)) {
        return Err(Error::Oracle(format!("slope_fit needs positive data, got ({t}, {v})")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Oracle("slope_fit needs at least two distinct T".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Gradient descent at step `1/L` (Frobenius `L`) from `x0` for `steps`
/// iterations. Errors if the objective ever increases.
pub fn reference_minimize(p: &ProblemSpec, x0: &Point, steps: usize) -> Result<(Point, f64)> {
    reference_minimize_until(p, x0, steps, 0.0)
}

/// As [`reference_minimize`], stopping early once the gradient norm is at
/// most `grad_tol` (further steps no longer move the iterate in floating point).
pub fn reference_minimize_until(p: &ProblemSpec, x0: &Point, steps: usize, grad_tol: f64) -> Result<(Point, f64)> {
    let step = 1.0 / p.l_frobenius();
    let mut x = x0.clone();
    let mut f = p.value(&x);
    // Increases below this are roundoff at the floor, not a wrong step size.
    let slack = 1e-13 * f.abs() + f64::MIN_POSITIVE;
    for k in 0..steps {
        let g = p.grad(&x);
        if g.norm_fro() <= grad_tol {
            break;
        }
        let next = x.axpy(-step, &g);
        let f_next = p.value(&next);
        if f_next > f + slack {
            return Err(Error::Oracle(format!(
                "gradient descent increased f at step {k} ({f} -> {f_next}); L too small?"
            )));
        }
        x = next;
        f = f_next;
    }
    Ok((x, f))
}
