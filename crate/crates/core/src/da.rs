//! Distance-Adaptive Muon.
//!
//! The radius follows the largest distance from `x_0` explored so far,
//! `r̄_{k+1} = max(r̄_k, ‖x_k − x_0‖)`, with step `η_k = r̄_{k+1}/√(k+1)`.
//! Every run asserts the momentum-tracking bound
//! `‖m_{k+1} − ∇f(x_k)‖_* ≤ L r̄_k [(1−α)^{k/2}/α + √2(1−α)/(α√(k+2))]`.

use std::f64::consts::{E, PI, SQRT_2};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::muon::{check_alpha, tr_step_at, MomentumState};
use crate::point::Point;
use crate::problems::ProblemSpec;
use crate::trace::{finite_or_diverged, Algorithm, RunOutput, Trace, TraceRecord};

pub const MOMENTUM_TRACKING: &str = "Momentum tracking";
pub const TRACKING_SLACK: f64 = 1e-8;

pub const EXTRAS: [&str; 4] = ["r_bar", "dist", "track_err", "track_bound"];

#[derive(Clone, Debug, PartialEq)]
pub struct DaConfig {
    /// Initial radius `r̄_0 = r > 0`.
    pub r: f64,
    pub alpha: f64,
    /// Optional post-hoc clamp `η_k ≤ eta_max`; not part of the analyzed method.
    pub eta_max: Option<f64>,
}

/// `0.1 · max(1, ‖x_0‖)`.
pub fn default_initial_radius(x0: &Point, geom: &Geometry) -> Result<f64> {
    Ok(0.1 * geom.primal_norm(x0)?.max(1.0))
}

#[derive(Clone, Debug)]
pub struct DaState {
    pub r_bar: f64,
    pub x0: Point,
    pub momentum: MomentumState,
    pub k: usize,
}

/// `max(r_bar, ‖x − x0‖)`.
pub fn da_radius_update(r_bar: f64, x: &Point, x0: &Point, geom: &Geometry) -> Result<f64> {
    if !(r_bar > 0.0) {
        return Err(Error::config(format!("trajectory radius must be > 0, got {r_bar}")));
    }
    x.check_layout(x0)?;
    Ok(r_bar.max(geom.primal_norm(&(x - x0))?))
}

/// Right-hand side of the momentum-tracking bound at iteration `k`, where
/// `r_bar_k` is the radius before the update of iteration `k`.
pub fn momentum_tracking_bound(l: f64, r_bar_k: f64, alpha: f64, k: usize) -> f64 {
    let q = 1.0 - alpha;
    let kf = k as f64;
    l * r_bar_k * (q.powf(kf / 2.0) / alpha + SQRT_2 * q / (alpha * (kf + 2.0).sqrt()))
}

pub fn da_run(p: &ProblemSpec, geom: &Geometry, x0: &Point, cfg: &DaConfig, horizon: usize) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    if !(cfg.r > 0.0) {
        return Err(Error::config("initial radius r must be > 0"));
    }
    if let Some(cap) = cfg.eta_max {
        if !(cap > 0.0) {
            return Err(Error::config("eta_max must be > 0"));
        }
    }
    check_alpha(cfg.alpha, false)?;
    geom.check(x0)?;
    let l = p.smoothness(geom)?;

    let mut g = p.grad(x0);
    let mut state = DaState {
        r_bar: cfg.r,
        x0: x0.clone(),
        momentum: MomentumState::warm_start(&g, cfg.alpha)?,
        k: 0,
    };
    let mut x = x0.clone();
    let mut f = finite_or_diverged(0, p.value(&x))?;
    let mut trace = Trace::new(Algorithm::Da, &EXTRAS);

    for k in 0..horizon {
        let r_prev = state.r_bar;
        let dist = geom.primal_norm(&(&x - &state.x0))?;
        state.r_bar = r_prev.max(dist);
        let mut eta = state.r_bar / ((k + 1) as f64).sqrt();
        if let Some(cap) = cfg.eta_max {
            eta = eta.min(cap);
        }
        let m = state.momentum.update(&g)?;
        let track_err = geom.dual_norm(&(m - &g))?;
        let track_bound = momentum_tracking_bound(l, r_prev, cfg.alpha, k);
        if track_err > track_bound + TRACKING_SLACK {
            return Err(Error::invariant(
                MOMENTUM_TRACKING,
                k,
                format!("||m_(k+1) - grad f(x_k)||_* = {track_err} exceeds bound {track_bound}"),
            ));
        }
        let next = tr_step_at(&x, m, eta, geom, k)?;
        trace.push(TraceRecord {
            k,
            f,
            gap: p.gap(f),
            grad_dual_norm: geom.dual_norm(&g)?,
            scale: eta,
            extras: vec![state.r_bar, dist, track_err, track_bound],
        });
        x = next;
        f = finite_or_diverged(k + 1, p.value(&x))?;
        g = p.grad(&x);
        state.k = k + 1;
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

/// `A(α) = (1/α)[1 + (1/√(1−α))·√(2π / ln(1/(1−α)))]`.
pub fn momentum_constant(alpha: f64) -> f64 {
    let q = 1.0 - alpha;
    (1.0 + (2.0 * PI / (1.0 / q).ln()).sqrt() / q.sqrt()) / alpha
}

/// `C_α(T) = 2A(α) + [7/2 + 2√2(1−α)/α](1 + ln T)`.
pub fn stationarity_constant(alpha: f64, horizon: usize) -> f64 {
    2.0 * momentum_constant(alpha) + (3.5 + 2.0 * SQRT_2 * (1.0 - alpha) / alpha) * (1.0 + (horizon as f64).ln())
}

/// Upper bound on `min_{0≤k<T} ‖∇f(x_{k+1})‖_*` for a trajectory that stays
/// within distance `d ≥ r` of `x_0`.
pub fn thm1_bound(f0_gap: f64, r: f64, d: f64, l: f64, alpha: f64, horizon: usize) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("r must be > 0, got {r}")));
    }
    if !(d >= r) {
        return Err(Error::Precondition(format!(
            "trajectory bound D = {d} must be >= r = {r}"
        )));
    }
    if horizon == 0 {
        return Err(Error::Precondition("T must be >= 1".into()));
    }
    check_alpha(alpha, false).map_err(|e| Error::Precondition(e.to_string()))?;
    let t = horizon as f64;
    let ratio = d / r;
    Ok(SQRT_2 * f0_gap / (r * t.sqrt())
        + 2.0 * l * stationarity_constant(alpha, horizon) * d / t.sqrt() * ratio.powf(2.0 / t) * (E * ratio).ln())
}
