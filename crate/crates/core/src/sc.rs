//! Scale-Calibrated Muon.
//!
//! The momentum is certified against the current gradient: with
//! `e_k = ‖g_k − m_{k+1}‖_*` and `a_k = (‖m_{k+1}‖_* − e_k)_+`, the radius is
//! `η_k = a_k/L`. Runs assert certified descent, the momentum-error recursion
//! and the Lyapunov decrease at every step.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::muon::{check_alpha, tr_step_at, MomentumState};
use crate::point::Point;
use crate::problems::ProblemSpec;
use crate::trace::{finite_or_diverged, Algorithm, RunOutput, Trace, TraceRecord};

pub const CERTIFIED_DESCENT: &str = "Certified descent";
pub const ERROR_RECURSION: &str = "Momentum-error recursion";
pub const LYAPUNOV_DESCENT: &str = "Lyapunov descent";
pub const GAP_TO_CERTIFICATE: &str = "Gap-to-certificate relation";

pub const DESCENT_SLACK: f64 = 1e-9;
pub const RECURSION_SLACK: f64 = 1e-10;
pub const LYAPUNOV_SLACK: f64 = 1e-9;
pub const GAP_SLACK: f64 = 1e-8;

/// `phi` is NaN when `f★` is unknown.
pub const EXTRAS: [&str; 4] = ["e", "a", "phi", "halt_streak"];

/// `(e, a)` for the next momentum `m_next` against the gradient `g`.
pub fn sc_certificate(m_next: &Point, g: &Point, geom: &Geometry) -> Result<(f64, f64)> {
    m_next.check_layout(g)?;
    let e = geom.dual_norm(&(g - m_next))?;
    let a = (geom.dual_norm(m_next)? - e).max(0.0);
    Ok((e, a))
}

/// Constants of the potential analysis for a given `alpha ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScConstants {
    /// `γ = α(2 − α)`.
    pub gamma: f64,
    /// `q = 1 − α`.
    pub q: f64,
    /// Weight of the squared error in the potential, `γ/(16q²)`.
    pub weight: f64,
    /// Guaranteed potential decrease rate, `min{3/8, γ³/(16q²)}`.
    pub chi: f64,
    /// `√5 + 2·weight`.
    pub c_sc: f64,
}

impl ScConstants {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha, false)?;
        let q = 1.0 - alpha;
        let gamma = alpha * (2.0 - alpha);
        let weight = gamma / (16.0 * q * q);
        Ok(Self {
            gamma,
            q,
            weight,
            chi: (3.0 / 8.0f64).min(gamma.powi(3) / (16.0 * q * q)),
            c_sc: 5f64.sqrt() + 2.0 * weight,
        })
    }
}

/// `gap + (A/L)·e²`.
pub fn sc_lyapunov(gap: f64, e: f64, alpha: f64, l: f64) -> Result<f64> {
    let c = ScConstants::new(alpha)?;
    if !(l > 0.0) {
        return Err(Error::config(format!("L must be > 0, got {l}")));
    }
    Ok(gap + c.weight / l * e * e)
}

/// Upper bound on `gap_T` given a sublevel-set radius `d_lev`.
pub fn thm2_bound(l: f64, d_lev: f64, alpha: f64, horizon: usize) -> Result<f64> {
    let c = ScConstants::new(alpha).map_err(|e| Error::Precondition(e.to_string()))?;
    if !(l > 0.0) || !(d_lev >= 0.0) || horizon == 0 {
        return Err(Error::Precondition(format!(
            "need L > 0, D >= 0, T >= 1 (L = {l}, D = {d_lev}, T = {horizon})"
        )));
    }
    Ok(c.c_sc * c.c_sc / c.chi * l * d_lev * d_lev / horizon as f64)
}

/// Radius of the initial sublevel set of an isotropic quadratic with curvature `l`.
pub fn quadratic_level_radius(gap0: f64, l: f64) -> f64 {
    (2.0 * gap0 / l).sqrt()
}

#[derive(Clone, Debug)]
pub struct ScState {
    pub momentum: MomentumState,
    pub x: Point,
    pub l: f64,
    pub e: f64,
    pub a: f64,
    pub eta: f64,
}

/// Step `k` quantities needed to verify the inequalities linking `k` and `k + 1`.
struct Pending {
    f: f64,
    e: f64,
    a: f64,
}

pub fn sc_run(p: &ProblemSpec, geom: &Geometry, x0: &Point, alpha: f64, horizon: usize) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    let consts = ScConstants::new(alpha)?;
    geom.check(x0)?;
    let l = p.smoothness(geom)?;

    let mut g = p.grad(x0);
    let mut state = ScState {
        momentum: MomentumState::warm_start(&g, alpha)?,
        x: x0.clone(),
        l,
        e: 0.0,
        a: 0.0,
        eta: 0.0,
    };
    let mut f = finite_or_diverged(0, p.value(x0))?;
    let mut trace = Trace::new(Algorithm::Sc, &EXTRAS);
    let mut prev: Option<Pending> = None;
    let mut halt_streak = 0usize;
    let w = consts.weight / l;
    // Only meaningful when star-convexity toward a known minimizer holds.
    let x_star = p.x_star().filter(|_| p.flags().star_convex());
    let mut d_obs = 0.0f64;

    for k in 0..=horizon {
        let m = state.momentum.update(&g)?.clone();
        let (e, a) = sc_certificate(&m, &g, geom)?;

        if let Some(pv) = prev.take() {
            let step = k - 1;
            let decrease = pv.a * pv.a / (2.0 * l);
            if f > pv.f - decrease + DESCENT_SLACK {
                return Err(Error::invariant(
                    CERTIFIED_DESCENT,
                    step,
                    format!("f went {} -> {f}, promised decrease {decrease}", pv.f),
                ));
            }
            let rhs = consts.q * (pv.e + pv.a);
            if e > rhs + RECURSION_SLACK {
                return Err(Error::invariant(
                    ERROR_RECURSION,
                    step,
                    format!("e_(k+1) = {e} > (1-alpha)(e_k + a_k) = {rhs}"),
                ));
            }
            // Potential difference; f★ cancels.
            let dphi = (f - pv.f) + w * (e * e - pv.e * pv.e);
            let bound = -consts.chi / l * (pv.a * pv.a + pv.e * pv.e);
            if dphi > bound + LYAPUNOV_SLACK {
                return Err(Error::invariant(
                    LYAPUNOV_DESCENT,
                    step,
                    format!("Phi change {dphi} exceeds {bound}"),
                ));
            }
        }
        if let Some(xs) = x_star {
            d_obs = d_obs.max(geom.primal_norm(&(&state.x - xs))?);
        }
        if k == horizon {
            break;
        }

        let eta = a / l;
        halt_streak = if a == 0.0 { halt_streak + 1 } else { 0 };
        let next = tr_step_at(&state.x, &m, eta, geom, k)?;
        let gap = p.gap(f);
        trace.push(TraceRecord {
            k,
            f,
            gap,
            grad_dual_norm: geom.dual_norm(&g)?,
            scale: eta,
            extras: vec![e, a, gap.map_or(f64::NAN, |d| d + w * e * e), halt_streak as f64],
        });
        (state.e, state.a, state.eta) = (e, a, eta);
        prev = Some(Pending { f, e, a });
        state.x = next;
        f = finite_or_diverged(k + 1, p.value(&state.x))?;
        g = p.grad(&state.x);
    }

    if x_star.is_some() {
        check_gap_to_certificate(&trace, d_obs)?;
    }
    Ok(RunOutput {
        trace,
        grad_dual_norm_final: geom.dual_norm(&g)?,
        gap_final: p.gap(f),
        f_final: f,
        x_final: state.x,
        grad_evals: horizon + 1,
    })
}

/// `gap_k ≤ D_obs·(a_k + 2e_k)` along a finished run, with `D_obs` the largest
/// observed distance to `x★` over `x_0, …, x_T`.
fn check_gap_to_certificate(trace: &Trace, d_obs: f64) -> Result<()> {
    for r in &trace.records {
        let Some(gap) = r.gap else { continue };
        let rhs = d_obs * (r.extras[1] + 2.0 * r.extras[0]);
        if gap > rhs + GAP_SLACK {
            return Err(Error::invariant(
                GAP_TO_CERTIFICATE,
                r.k,
                format!("gap {gap} > D_obs(a + 2e) = {rhs}"),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_problem;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Point {
        Point::from_vec(&[v])
    }

    #[test]
    fn certificate_examples() {
        let e = Geometry::euclidean();
        let g = Point::from_vec(&[3.0, -4.0]);
        assert_eq!(sc_certificate(&g, &g, &e).unwrap(), (0.0, 5.0));
        let (err, a) = sc_certificate(&scalar(0.5), &scalar(0.0), &e).unwrap();
        assert_eq!((err, a), (0.5, 0.0));
        assert_eq!(sc_certificate(&scalar(0.75), &scalar(0.5), &e).unwrap(), (0.25, 0.5));
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(sc_lyapunov(0.7, 0.0, 0.3, 2.0).unwrap(), 0.7);
        assert_eq!(sc_lyapunov(0.0, 0.0, 0.3, 2.0).unwrap(), 0.0);
        let c = ScConstants::new(0.5).unwrap();
        assert_relative_eq!(c.weight, 0.1875, epsilon = 1e-15);
        assert_relative_eq!(sc_lyapunov(1.0, 2.0, 0.5, 1.0).unwrap(), 1.75, epsilon = 1e-15);
        assert!(sc_lyapunov(1.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quadratic_solved_in_one_step_then_halts() {
        let p = make_problem("quad_iso", 1, 0).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let out = sc_run(&p, &Geometry::euclidean(), &scalar(1.0), alpha, 3).unwrap();
            let r = &out.trace.records;
            assert_eq!((r[0].extras[1], r[0].scale), (1.0, 1.0));
            assert_eq!(r[1].f, 0.0);
            assert_relative_eq!(r[1].extras[0], 1.0 - alpha, epsilon = 1e-15);
            assert_eq!((r[1].extras[1], r[1].scale), (0.0, 0.0));
            assert_eq!(out.x_final.to_flat()[0], 0.0);
            assert_eq!(out.trace.column("halt_streak").unwrap(), vec![0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn start_at_minimizer_stays_put() {
        let p = make_problem("quad_iso", 3, 0).unwrap();
        let x0 = Point::from_vec(&[0.0; 3]);
        let out = sc_run(&p, &Geometry::linf(), &x0, 0.5, 10).unwrap();
        assert!(out.trace.records.iter().all(|r| r.extras[1] == 0.0 && r.f == 0.0));
        assert_eq!(out.x_final, x0);
    }

    #[test]
    fn descent_is_monotone_on_all_geometries() {
        let p = make_problem("logistic", 6, 1).unwrap();
        let x0 = p.initial_point(2);
        for g in [Geometry::euclidean(), Geometry::linf()] {
            let out = sc_run(&p, &g, &x0, 0.3, 200).unwrap();
            let v = out.trace.values();
            assert!(v.windows(2).all(|w| w[1] <= w[0] + DESCENT_SLACK));
        }
    }

    #[test]
    fn thm2_bound_examples() {
        let c = ScConstants::new(0.5).unwrap();
        assert_relative_eq!(c.chi, (0.75f64.powi(3) / 4.0).min(0.375), epsilon = 1e-15);
        let b = thm2_bound(1.0, 1.0, 0.5, 10).unwrap();
        assert_relative_eq!(b, c.c_sc * c.c_sc / c.chi / 10.0, epsilon = 1e-15);
        assert_relative_eq!(quadratic_level_radius(0.5, 1.0), 1.0);
        assert!(thm2_bound(1.0, 1.0, 0.5, 0).is_err());
    }
}
