//! Distance-Free Muon.
//!
//! Each step moves along the ray `z(R) = c_k + βR·s_k`, where
//! `c_k = x_0 + (1−β)(x_k − x_0)` pulls the iterate back toward the start and
//! `s_k` is the descent LMO direction of the momentum. The radius `R_k`
//! minimizes a convex one-dimensional majorant regularized toward a scalar
//! lower certificate `d_{k+1}` of the distance `‖x★ − x_0‖`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::muon::{check_alpha, tr_step_at, MomentumState};
use crate::point::Point;
use crate::problems::ProblemSpec;
use crate::trace::{finite_or_diverged, Algorithm, RunOutput, Trace, TraceRecord};

pub const CERTIFICATE_VALIDITY: &str = "Validity of the D-certificate";
pub const MAJORIZATION: &str = "Smoothness majorization";
pub const ONE_STEP: &str = "One-step majorized inequality";

pub const VALIDITY_SLACK: f64 = 1e-8;
pub const MAJORIZATION_SLACK: f64 = 1e-9;
pub const ONE_STEP_SLACK: f64 = 1e-8;

/// Default relative tolerance of the scalar radius search.
pub const SEARCH_TOL: f64 = 1e-10;
/// Relative agreement required between the quadratic fit and a fourth sample.
pub const FIT_CHECK_RTOL: f64 = 1e-8;
const MAX_BRACKET_DOUBLINGS: usize = 200;

pub const EXTRAS: [&str; 4] = ["d", "R", "step_norm", "d_hat"];

/// Weights `ω_k` of the distance certificate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OmegaRule {
    /// `ω_k = 1`.
    #[default]
    Unit,
    /// `ω_k = 1/max(1, ‖g_k‖_*)`.
    Normalized,
}

impl OmegaRule {
    pub fn weight(self, grad_dual_norm: f64) -> f64 {
        match self {
            OmegaRule::Unit => 1.0,
            OmegaRule::Normalized => 1.0 / grad_dual_norm.max(1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OmegaRule::Unit => "unit",
            OmegaRule::Normalized => "normalized",
        }
    }
}

impl fmt::Display for OmegaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OmegaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" | "1" => Ok(OmegaRule::Unit),
            "normalized" => Ok(OmegaRule::Normalized),
            _ => Err(Error::config(format!(
                "unknown omega rule '{s}' (expected unit or normalized)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub big_m: f64,
    pub omega: OmegaRule,
}

pub const DEFAULT_ALPHA: f64 = 0.9;
pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_BIG_M: f64 = 6.0;

/// `min{α, 2 ln(T+1)/T}`.
pub fn beta_for_horizon(alpha: f64, horizon: usize) -> f64 {
    let t = horizon.max(1) as f64;
    alpha.min(2.0 * (t + 1.0).ln() / t)
}

impl DfConfig {
    pub fn new(alpha: f64, beta: f64, rho: f64, lambda: f64, big_m: f64, omega: OmegaRule) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            rho,
            lambda,
            big_m,
            omega,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default parameters with `β` set from the horizon.
    pub fn for_horizon(alpha: f64, horizon: usize) -> Result<Self> {
        check_alpha(alpha, false)?;
        Self::new(
            alpha,
            beta_for_horizon(alpha, horizon),
            DEFAULT_RHO,
            DEFAULT_LAMBDA,
            DEFAULT_BIG_M,
            OmegaRule::Unit,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha, false)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        for (name, v) in [("rho", self.rho), ("lambda", self.lambda), ("M", self.big_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.big_m < 2.0 * (1.0 + 2.0 * self.rho) {
            return Err(Error::config(format!(
                "M = {} must be >= 2(1 + 2 rho) = {}",
                self.big_m,
                2.0 * (1.0 + 2.0 * self.rho)
            )));
        }
        if self.alpha <= self.beta / 2.0 {
            return Err(Error::config(format!(
                "alpha = {} must exceed beta/2 = {}",
                self.alpha,
                self.beta / 2.0
            )));
        }
        Ok(())
    }

    /// `C₀ = 1 + 2ρ + λ/2 + M`.
    pub fn c0(&self) -> f64 {
        1.0 + 2.0 * self.rho + self.lambda / 2.0 + self.big_m
    }

    /// `C = 2C₀ + 4(1−α)²/(ρ(α − β/2)²)`.
    pub fn rate_constant(&self) -> f64 {
        let q = 1.0 - self.alpha;
        let margin = self.alpha - self.beta / 2.0;
        2.0 * self.c0() + 4.0 * q * q / (self.rho * margin * margin)
    }
}

/// Scalar lower certificate for `‖x★ − x_0‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct DCert {
    /// Weighted gradient sum.
    pub s: Point,
    pub b: f64,
    pub d: f64,
    /// Most recent raw estimate `[B]_+/‖S‖_*`.
    pub d_hat: f64,
}

impl DCert {
    pub fn new(zero: Point, d0: f64) -> Result<Self> {
        if !(d0 >= 0.0 && d0.is_finite()) {
            return Err(Error::config(format!("d0 must be a finite value >= 0, got {d0}")));
        }
        Ok(Self {
            s: zero.scale(0.0),
            b: 0.0,
            d: d0,
            d_hat: 0.0,
        })
    }
}

pub fn dcert_update(cert: &DCert, g: &Point, y: &Point, omega: f64, geom: &Geometry) -> Result<DCert> {
    if !(omega >= 0.0) {
        return Err(Error::config(format!("omega must be >= 0, got {omega}")));
    }
    g.check_layout(y)?;
    let s = cert.s.axpy(omega, g);
    let b = cert.b - omega * g.dot(y);
    let s_norm = geom.dual_norm(&s)?;
    let d_hat = if s_norm > 0.0 { b.max(0.0) / s_norm } else { 0.0 };
    Ok(DCert {
        s,
        b,
        d: cert.d.max(d_hat),
        d_hat,
    })
}

/// Geometry of one DF step.
#[derive(Clone, Debug)]
pub struct RayState {
    pub x0: Point,
    pub x: Point,
    /// `x − x_0`.
    pub y: Point,
    /// Descent LMO direction of the momentum.
    pub s: Point,
    /// `x_0 + (1 − β)y`.
    pub c: Point,
    pub beta: f64,
}

impl RayState {
    pub fn new(x0: &Point, x: &Point, m: &Point, beta: f64, geom: &Geometry) -> Result<Self> {
        x.check_layout(x0)?;
        let y = x - x0;
        let s = geom.lmo_descent(m)?;
        let c = x0.axpy(1.0 - beta, &y);
        Ok(Self {
            x0: x0.clone(),
            x: x.clone(),
            y,
            s,
            c,
            beta,
        })
    }

    /// `z(R) = c + βR·s`.
    pub fn z(&self, r: f64) -> Point {
        self.c.axpy(self.beta * r, &self.s)
    }

    /// `R·s − y`, so that `z(R) − x = β(R·s − y)`.
    pub fn offset(&self, r: f64) -> Point {
        &self.s.scale(r) - &self.y
    }
}

/// `Q(R) − f(x)`: the majorant without its constant term.
fn majorant_excess(
    state: &RayState,
    g: &Point,
    l: f64,
    cfg: &DfConfig,
    d_next: f64,
    r: f64,
    geom: &Geometry,
) -> Result<f64> {
    let beta = cfg.beta;
    let w = state.offset(r);
    let w_sq = geom.primal_norm(&w)?.powi(2);
    let yk1 = state.y.scale(1.0 - beta).axpy(beta * r, &state.s);
    let yk1_sq = geom.primal_norm(&yk1)?.powi(2);
    Ok(beta * g.dot(&w)
        + 0.5 * l * beta * beta * w_sq
        + cfg.big_m * beta * l * yk1_sq
        + cfg.rho * l * beta * beta * w_sq
        + 0.5 * cfg.lambda * l * beta * beta * (r - d_next).powi(2))
}

/// Regularized smoothness majorant `Q_k(R)`.
#[allow(clippy::too_many_arguments)]
pub fn majorant_eval(
    state: &RayState,
    g: &Point,
    l: f64,
    cfg: &DfConfig,
    d_next: f64,
    f_x: f64,
    r: f64,
    geom: &Geometry,
) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::config(format!("radius must be >= 0, got {r}")));
    }
    Ok(f_x + majorant_excess(state, g, l, cfg, d_next, r, geom)?)
}

/// Minimizer of `Q_k` over `[0, ∞)`.
#[allow(clippy::too_many_arguments)]
pub fn radius_search(
    state: &RayState,
    g: &Point,
    l: f64,
    cfg: &DfConfig,
    d_next: f64,
    f_x: f64,
    geom: &Geometry,
    tol: f64,
) -> Result<f64> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::config("radius search needs lambda > 0"));
    }
    if !(tol > 0.0) {
        return Err(Error::config(format!("search tolerance must be > 0, got {tol}")));
    }
    let q = |r: f64| -> Result<f64> {
        let v = majorant_excess(state, g, l, cfg, d_next, r, geom)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::config(format!("majorant is not finite at R = {r}")))
        }
    };
    if geom.is_inner_product() {
        if let Some(r) = quadratic_vertex(&q, f_x)? {
            return Ok(r);
        }
    }
    let mut hi = (2.0 * d_next).max(1.0);
    let mut doublings = 0;
    while q(hi)? < q(hi / 2.0)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::config("radius search bracket did not close"));
        }
    }
    let width = tol * hi.max(1.0);
    let mut lo = 0.0;
    while hi - lo > width {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if q(m1)? <= q(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits `a + bR + cR²` through `R = 0, 1, 2`; returns the clamped vertex if
/// the fit also reproduces `R = 3`.
fn quadratic_vertex(q: &impl Fn(f64) -> Result<f64>, f_x: f64) -> Result<Option<f64>> {
    let (q0, q1, q2, q3) = (q(0.0)?, q(1.0)?, q(2.0)?, q(3.0)?);
    let c = 0.5 * (q2 - 2.0 * q1 + q0);
    let b = q1 - q0 - c;
    let predicted = q0 + 3.0 * b + 9.0 * c;
    let scale = (q3 + f_x).abs().max(q3.abs()).max(f64::MIN_POSITIVE);
    if (predicted - q3).abs() > FIT_CHECK_RTOL * scale || !(c > 0.0) {
        return Ok(None);
    }
    Ok(Some((-b / (2.0 * c)).max(0.0)))
}

/// `(1 − β/2)^T·gap0 + C·LβD²`.
pub fn thm3_bound(gap0: f64, l: f64, d: f64, cfg: &DfConfig, horizon: usize) -> Result<f64> {
    cfg.validate().map_err(|e| Error::Precondition(e.to_string()))?;
    if !(d >= 0.0) || !(l >= 0.0) || !(gap0 >= 0.0) {
        return Err(Error::Precondition(format!(
            "need gap0, L, D >= 0 (gap0 = {gap0}, L = {l}, D = {d})"
        )));
    }
    let contraction = (1.0 - cfg.beta / 2.0).powi(horizon.try_into().unwrap_or(i32::MAX));
    Ok(contraction * gap0 + cfg.rate_constant() * l * cfg.beta * d * d)
}

pub fn df_run(
    p: &ProblemSpec,
    geom: &Geometry,
    x0: &Point,
    cfg: &DfConfig,
    horizon: usize,
    d0: f64,
) -> Result<RunOutput> {
    df_run_with_tol(p, geom, x0, cfg, horizon, d0, SEARCH_TOL)
}

pub fn df_run_with_tol(
    p: &ProblemSpec,
    geom: &Geometry,
    x0: &Point,
    cfg: &DfConfig,
    horizon: usize,
    d0: f64,
    tol: f64,
) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    cfg.validate()?;
    geom.check(x0)?;
    let l = p.smoothness(geom)?;
    let beta = cfg.beta;

    // Distance to the minimizer, when the certificate lemmas apply.
    let dist_star = match p.x_star() {
        Some(xs) if p.flags().star_convex() => Some(geom.primal_norm(&(xs - x0))?),
        _ => None,
    };

    let mut x = x0.clone();
    let mut g = p.grad(&x);
    let mut f = finite_or_diverged(0, p.value(&x))?;
    let mut mom = MomentumState::warm_start(&g, cfg.alpha)?;
    let mut cert = DCert::new(x0.clone(), d0)?;
    let mut trace = Trace::new(Algorithm::Df, &EXTRAS);

    for k in 0..horizon {
        let g_dual = geom.dual_norm(&g)?;
        let y = &x - x0;
        cert = dcert_update(&cert, &g, &y, cfg.omega.weight(g_dual), geom)?;
        if let Some(dd) = dist_star {
            if cert.d > dd + VALIDITY_SLACK {
                return Err(Error::invariant(
                    CERTIFICATE_VALIDITY,
                    k,
                    format!("d = {} exceeds ||x* - x0|| = {dd}", cert.d),
                ));
            }
        }
        let m = mom.update(&g)?.clone();
        let ray = RayState::new(x0, &x, &m, beta, geom)?;
        let r = radius_search(&ray, &g, l, cfg, cert.d, f, geom, tol)?;
        let next = tr_step_at(&ray.c, &m, beta * r, geom, k)?;
        let f_next = finite_or_diverged(k + 1, p.value(&next))?;

        let w = ray.offset(r);
        let w_norm = geom.primal_norm(&w)?;
        let upper = f + beta * g.dot(&w) + 0.5 * l * beta * beta * w_norm * w_norm;
        if f_next > upper + MAJORIZATION_SLACK {
            return Err(Error::invariant(
                MAJORIZATION,
                k,
                format!("f(x_(k+1)) = {f_next} above majorant {upper}"),
            ));
        }
        let step_norm = geom.primal_norm(&(&next - &x))?;
        if let (Some(dd), Some(fs)) = (dist_star, p.f_star()) {
            if dd > 0.0 {
                let e_norm = geom.dual_norm(&(&g - &m))?;
                let pot = |gap: f64, yv: &Point| -> Result<f64> {
                    Ok(gap + cfg.big_m * beta * l * geom.primal_norm(yv)?.powi(2))
                };
                let lhs = pot(f_next - fs, &(&next - x0))? + cfg.rho * l * step_norm * step_norm;
                let rhs = (1.0 - beta / 2.0) * pot(f - fs, &y)?
                    + cfg.c0() * l * beta * beta * dd * dd
                    + 2.0 * beta * dd * e_norm;
                if lhs > rhs + ONE_STEP_SLACK {
                    return Err(Error::invariant(ONE_STEP, k, format!("potential {lhs} exceeds {rhs}")));
                }
            }
        }

        trace.push(TraceRecord {
            k,
            f,
            gap: p.gap(f),
            grad_dual_norm: g_dual,
            scale: beta * r,
            extras: vec![cert.d, r, step_norm, cert.d_hat],
        });
        x = next;
        f = f_next;
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
