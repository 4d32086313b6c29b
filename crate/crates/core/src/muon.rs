//! Shared Muon machinery: exponential momentum, the trust-region step and the
//! fixed-scale baseline.

use crate::error::{Error, Result};
use crate::geometry::{ldexp, safe_exponent, Geometry};
use crate::point::Point;
use crate::problems::ProblemSpec;
use crate::trace::{finite_or_diverged, Algorithm, RunOutput, Trace, TraceRecord};

/// Relative tolerance of the trust-region optimality identity.
pub const IDENTITY_RTOL: f64 = 1e-8;

pub const OPTIMALITY_IDENTITY: &str = "Trust-region optimality identity";

/// Exponential moving average of gradients, warm-started at `∇f(x_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub m: Point,
    pub alpha: f64,
}

impl MomentumState {
    pub fn warm_start(g0: &Point, alpha: f64) -> Result<Self> {
        check_alpha(alpha, true)?;
        Ok(Self { m: g0.clone(), alpha })
    }

    /// Advances `m_k -> m_{k+1}` and returns the new momentum.
    pub fn update(&mut self, g: &Point) -> Result<&Point> {
        self.m = ema_update(&self.m, g, self.alpha)?;
        Ok(&self.m)
    }
}

/// `alpha ∈ (0, 1)`, or `(0, 1]` when `allow_one`.
pub fn check_alpha(alpha: f64, allow_one: bool) -> Result<()> {
    let ok = alpha > 0.0 && (alpha < 1.0 || (allow_one && alpha == 1.0));
    if ok {
        Ok(())
    } else {
        let hi = if allow_one { "1]" } else { "1)" };
        Err(Error::config(format!("alpha must lie in (0, {hi}, got {alpha}")))
    }
}

/// `(1 − alpha)·m + alpha·g`.
pub fn ema_update(m: &Point, g: &Point, alpha: f64) -> Result<Point> {
    check_alpha(alpha, true)?;
    m.check_layout(g)?;
    Ok(m.scale(1.0 - alpha).axpy(alpha, g))
}

/// `x − eta·u(m)`, asserting `⟨m, x − x₊⟩ = eta·‖m‖_*` through the unit pairing.
pub fn tr_step(x: &Point, m: &Point, eta: f64, geom: &Geometry) -> Result<Point> {
    tr_step_at(x, m, eta, geom, 0)
}

/// As [`tr_step`], reporting `step` in any invariant failure.
pub fn tr_step_at(x: &Point, m: &Point, eta: f64, geom: &Geometry, step: usize) -> Result<Point> {
    if !(eta >= 0.0) {
        return Err(Error::config(format!("trust-region radius must be >= 0, got {eta}")));
    }
    x.check_layout(m)?;
    let u = geom.lmo_ascent(m)?;
    // Checking the unit pairing ⟨m, u⟩ = ‖m‖_* implies the scaled identity
    // and still detects a broken oracle when eta = 0. Both sides are
    // homogeneous in m, so an exact power-of-two rescale keeps decayed
    // momenta out of the subnormal range.
    let amax = m.blocks().iter().map(|b| b.data.amax()).fold(0.0, f64::max);
    let m_hat = match safe_exponent(amax) {
        Some(k) => m.map_blocks(|b| b.map(|v| ldexp(v, -k))),
        None => m.clone(),
    };
    let lhs = m_hat.dot(&u);
    let rhs = geom.dual_norm(&m_hat)?;
    if (lhs - rhs).abs() > IDENTITY_RTOL * rhs.abs() + f64::MIN_POSITIVE {
        return Err(Error::invariant(
            OPTIMALITY_IDENTITY,
            step,
            format!("<m, u(m)> = {lhs:e} but ||m||_* = {rhs:e}"),
        ));
    }
    let displacement = u.scale(eta);
    Ok(x - &displacement)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedConfig {
    pub eta: f64,
    pub alpha: f64,
}

/// Muon with a constant radius.
pub fn fixed_muon_run(
    p: &ProblemSpec,
    geom: &Geometry,
    x0: &Point,
    cfg: &FixedConfig,
    horizon: usize,
) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    if !(cfg.eta >= 0.0) {
        return Err(Error::config("eta must be >= 0"));
    }
    geom.check(x0)?;
    let mut x = x0.clone();
    let mut g = p.grad(&x);
    let mut mom = MomentumState::warm_start(&g, cfg.alpha)?;
    let mut trace = Trace::new(Algorithm::Fixed, &[]);
    let mut f = finite_or_diverged(0, p.value(&x))?;
    for k in 0..horizon {
        let m = mom.update(&g)?;
        let next = tr_step_at(&x, m, cfg.eta, geom, k)?;
        trace.push(TraceRecord {
            k,
            f,
            gap: p.gap(f),
            grad_dual_norm: geom.dual_norm(&g)?,
            scale: cfg.eta,
            extras: vec![],
        });
        x = next;
        f = finite_or_diverged(k + 1, p.value(&x))?;
        g = p.grad(&x);
    }
    Ok(RunOutput {
        trace,
        grad_dual_norm_final: geom.dual_norm(&g)?,
        gap_final: p.gap(f),
        f_final: f,
        x_final: x,
        grad_evals: horizon + 1,
    })
}
