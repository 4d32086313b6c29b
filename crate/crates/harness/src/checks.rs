//! Invariant suites behind `muonscale check`. Each entry reports the worst
//! observed excess over its allowed slack; lemmas that the optimizers assert
//! inline surface here as run failures with the lemma name and step.

use std::cell::Cell;
use std::fmt;

use clap::ValueEnum;
use muonscale::da::{da_run, thm1_bound, DaConfig, MOMENTUM_TRACKING, TRACKING_SLACK};
use muonscale::df::{
    df_run, majorant_eval, radius_search, thm3_bound, DfConfig, OmegaRule, RayState, CERTIFICATE_VALIDITY,
    MAJORIZATION, ONE_STEP, SEARCH_TOL, VALIDITY_SLACK,
};
use muonscale::geometry::{orthogonalize, singular_values, Orthogonalization};
use muonscale::muon::{fixed_muon_run, FixedConfig, OPTIMALITY_IDENTITY};
use muonscale::practical::{practical_run, PracticalCfg, SoftmaxModel, StochasticObjective};
use muonscale::problems::{build_problem, ProblemOptions};
use muonscale::sc::{
    quadratic_level_radius, sc_run, thm2_bound, ScConstants, CERTIFIED_DESCENT, DESCENT_SLACK, ERROR_RECURSION,
    GAP_TO_CERTIFICATE, LYAPUNOV_DESCENT, LYAPUNOV_SLACK,
};
use muonscale::testkit::zoomed_grid_min;
use muonscale::{
    make_problem, BlockShape, Error, Geometry, Layout, NormTag, Point, ProblemKind, ProblemSpec, RunOutput,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{DEFAULT_BATCH, SOFTMAX_CLASSES, SOFTMAX_FEATURES, SOFTMAX_SAMPLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Geometry,
    Da,
    Sc,
    Df,
    Practical,
    All,
}

impl Suite {
    fn label(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Da => "da",
            Suite::Sc => "sc",
            Suite::Df => "df",
            Suite::Practical => "practical",
            Suite::All => "all",
        }
    }
}

/// Faults that can be injected to confirm the checks catch them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Every geometry returns `−u(m)` from its oracle.
    NegatedLmo,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOpts {
    pub fault: Option<Fault>,
}

impl CheckOpts {
    fn geom(&self, g: Geometry) -> Geometry {
        match self.fault {
            Some(Fault::NegatedLmo) => g.with_negated_lmo(),
            None => g,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub lemma: String,
    pub step: Option<usize>,
    pub detail: String,
}

/// Worst excess of an inequality `lhs ≤ rhs + limit`, measured as `lhs − rhs`.
#[derive(Clone, Debug)]
pub struct Tally {
    pub name: String,
    pub limit: f64,
    pub worst: Option<f64>,
    pub samples: usize,
    pub failure: Option<Failure>,
}

impl Tally {
    pub fn new(name: impl Into<String>, limit: f64) -> Self {
        Self {
            name: name.into(),
            limit,
            worst: None,
            samples: 0,
            failure: None,
        }
    }

    /// Records one excess; the first one over the limit (or NaN) becomes
    /// the reported failure.
    pub fn observe(&mut self, excess: f64, step: Option<usize>, context: impl FnOnce() -> String) {
        self.samples += 1;
        self.worst = Some(match self.worst {
            Some(w) if !(excess > w) && !excess.is_nan() => w,
            _ => excess,
        });
        if !(excess <= self.limit) && self.failure.is_none() {
            self.failure = Some(Failure {
                lemma: self.name.clone(),
                step,
                detail: format!("excess {excess:e} over slack {:e}: {}", self.limit, context()),
            });
        }
    }

    /// Folds in a run that stopped early, keeping the first failure.
    pub fn run_error(&mut self, label: &str, err: &Error) {
        if self.failure.is_some() {
            return;
        }
        self.failure = Some(match err {
            Error::Invariant { lemma, step, detail } => Failure {
                lemma: lemma.to_string(),
                step: Some(*step),
                detail: format!("{label}: {detail}"),
            },
            Error::Divergence { step, .. } => Failure {
                lemma: "divergence".into(),
                step: Some(*step),
                detail: format!("{label}: {err}"),
            },
            other => Failure {
                lemma: self.name.clone(),
                step: None,
                detail: format!("{label}: {other}"),
            },
        });
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub suite: &'static str,
    pub tally: Tally,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.tally;
        match &t.failure {
            None => {
                let worst = t.worst.map_or("asserted inline".to_string(), |w| {
                    format!("worst {w:.3e} (slack {:.0e})", t.limit)
                });
                write!(f, "PASS [{}] {}: {worst}, {} samples", self.suite, t.name, t.samples)
            }
            Some(fl) => {
                let at = fl.step.map_or(String::new(), |s| format!(" at step {s}"));
                write!(f, "FAIL [{}] {}: '{}'{at}: {}", self.suite, t.name, fl.lemma, fl.detail)
            }
        }
    }
}

pub fn run_suite(suite: Suite, opts: &CheckOpts) -> Vec<Outcome> {
    let tallies = match suite {
        Suite::Geometry => geometry_suite(opts),
        Suite::Da => da_suite(opts),
        Suite::Sc => sc_suite(opts),
        Suite::Df => df_suite(opts),
        Suite::Practical => practical_suite(),
        Suite::All => {
            return [Suite::Geometry, Suite::Da, Suite::Sc, Suite::Df, Suite::Practical]
                .into_iter()
                .flat_map(|s| run_suite(s, opts))
                .collect();
        }
    };
    tallies
        .into_iter()
        .map(|tally| Outcome {
            suite: suite.label(),
            tally,
        })
        .collect()
}

// ---- shared fixtures --------------------------------------------------------

/// Layout/geometry pairs covering every norm tag and mixed products.
pub fn geometry_setups() -> Vec<(Layout, Geometry)> {
    vec![
        (vec![BlockShape::vector("x", 5)], Geometry::euclidean()),
        (vec![BlockShape::vector("x", 5)], Geometry::linf()),
        (vec![BlockShape::matrix("W", 3, 4)], Geometry::spectral()),
        (vec![BlockShape::matrix("W", 4, 2)], Geometry::spectral()),
        (
            vec![BlockShape::vector("b", 3), BlockShape::matrix("W", 2, 3)],
            Geometry::new(vec![NormTag::Euclidean, NormTag::Spectral]),
        ),
        (
            vec![
                BlockShape::vector("b", 3),
                BlockShape::matrix("W", 3, 3),
                BlockShape::vector("c", 2),
            ],
            Geometry::new(vec![NormTag::LinfSign, NormTag::Spectral, NormTag::Euclidean]),
        ),
    ]
}

pub fn gaussian_point(layout: &[BlockShape], rng: &mut ChaCha8Rng, scale: f64) -> Point {
    let n: usize = layout.iter().map(BlockShape::len).sum();
    let flat: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Point::from_flat(layout, &flat).expect("length matches layout")
}

/// Relative error of `⟨m, u(m)⟩ = ‖m‖_*` on `count` seeded momenta per
/// geometry, with magnitudes spread over twelve decades.
pub fn lmo_pairing(opts: &CheckOpts, count: usize, seed: u64) -> Tally {
    let mut t = Tally::new(OPTIMALITY_IDENTITY, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (layout, geom) in geometry_setups() {
        let geom = opts.geom(geom);
        for i in 0..count {
            let scale = 10f64.powf(rng.random_range(-6.0..6.0));
            let m = gaussian_point(&layout, &mut rng, scale);
            let (d, u) = match (geom.dual_norm(&m), geom.lmo_ascent(&m)) {
                (Ok(d), Ok(u)) => (d, u),
                (Err(e), _) | (_, Err(e)) => {
                    t.run_error("lmo", &e);
                    continue;
                }
            };
            let pairing = m.dot(&u);
            t.observe((pairing - d).abs() / d, Some(i), || {
                format!("{geom:?}: <m,u> = {pairing}, ||m||_* = {d}")
            });
        }
    }
    t
}

/// Inline assertions of every run, folded into one entry.
fn inline_tally(name: &str, runs: &[(String, muonscale::Result<RunOutput>)]) -> Tally {
    let mut t = Tally::new(name, 0.0);
    for (label, r) in runs {
        match r {
            Ok(_) => t.samples += 1,
            Err(e) => t.run_error(label, e),
        }
    }
    t
}

// ---- geometry ---------------------------------------------------------------

fn geometry_suite(opts: &CheckOpts) -> Vec<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairing = lmo_pairing(opts, 500, 1);
    let mut unit = Tally::new("LMO has unit primal norm", 1e-10);
    let mut holder = Tally::new("Hölder inequality", 1e-10);
    let mut triangle = Tally::new("Dual norm triangle inequality", 1e-10);
    for (layout, geom) in geometry_setups() {
        let geom = opts.geom(geom);
        for i in 0..200 {
            let (a, b) = (
                gaussian_point(&layout, &mut rng, 3.0),
                gaussian_point(&layout, &mut rng, 3.0),
            );
            let (Ok(u), Ok(na), Ok(nb), Ok(nab), Ok(pb)) = (
                geom.lmo_ascent(&a),
                geom.dual_norm(&a),
                geom.dual_norm(&b),
                geom.dual_norm(&(&a + &b)),
                geom.primal_norm(&b),
            ) else {
                unit.run_error("norms", &Error::Oracle("norm evaluation failed".into()));
                continue;
            };
            let pu = geom.primal_norm(&u).unwrap_or(f64::NAN);
            unit.observe(pu - 1.0, Some(i), || format!("||u|| = {pu}"));
            let bound = na * pb;
            holder.observe((a.dot(&b).abs() - bound) / (1.0 + bound), Some(i), || {
                format!("{geom:?}")
            });
            triangle.observe((nab - na - nb) / (1.0 + nab), Some(i), || format!("{geom:?}"));
        }
    }

    let mut polar = Tally::new("Polar factor is a partial isometry", 1e-8);
    for i in 0..200 {
        let mut m = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-3.0..3.0));
        for r in 0..(i % 3) {
            let row = m.row(0).clone_owned();
            m.set_row(r + 1, &(row * (r as f64 + 2.0)));
        }
        match orthogonalize(&m, Orthogonalization::Exact) {
            Ok(q) => {
                let worst = singular_values(&q)
                    .into_iter()
                    .map(|s| s.abs().min((s - 1.0).abs()))
                    .fold(0.0, f64::max);
                polar.observe(worst, Some(i), || "singular value away from {0, 1}".into());
            }
            Err(e) => polar.run_error("polar", &e),
        }
    }

    let mut runs = vec![];
    for (name, geom) in [("euclidean", Geometry::euclidean()), ("linf", Geometry::linf())] {
        let p = make_problem("quad_iso", 5, 0).expect("builtin problem");
        let cfg = FixedConfig { eta: 0.05, alpha: 0.5 };
        runs.push((
            format!("fixed/{name}"),
            fixed_muon_run(&p, &opts.geom(geom), &p.initial_point(0), &cfg, 50),
        ));
    }
    let p = build_problem(
        ProblemKind::LeastSquares,
        vec![BlockShape::matrix("W", 3, 4)],
        0,
        &ProblemOptions::default(),
    )
    .expect("builtin problem");
    let cfg = FixedConfig { eta: 0.01, alpha: 0.5 };
    runs.push((
        "fixed/spectral".into(),
        fixed_muon_run(&p, &opts.geom(Geometry::spectral()), &p.initial_point(0), &cfg, 50),
    ));
    let steps = inline_tally("Trust-region optimality identity along runs", &runs);

    vec![pairing, unit, holder, triangle, polar, steps]
}

// ---- DA ---------------------------------------------------------------------

pub struct DaMargins {
    pub tracking: Tally,
    pub radius: Tally,
    pub stationarity: Tally,
    pub inline: Tally,
}

/// Runs DA on each problem/seed/alpha/geometry combination and measures
/// the tracking bound, radius monotonicity and the stationarity bound.
pub fn da_margins(
    opts: &CheckOpts,
    problems: &[&str],
    dim: usize,
    seeds: u64,
    alphas: &[f64],
    horizons: &[usize],
) -> DaMargins {
    let mut m = DaMargins {
        tracking: Tally::new(MOMENTUM_TRACKING, TRACKING_SLACK),
        radius: Tally::new("Radius never shrinks", 0.0),
        stationarity: Tally::new("Stationarity bound (realized D)", 0.0),
        inline: Tally::new("", 0.0),
    };
    let mut runs = vec![];
    for name in problems {
        for seed in 0..seeds {
            let p = make_problem(name, dim, seed).expect("builtin problem");
            let x0 = p.initial_point(seed);
            for geom in [Geometry::euclidean(), Geometry::linf()] {
                let geom = opts.geom(geom);
                for &alpha in alphas {
                    for &t in horizons {
                        let r = 0.1 * geom.primal_norm(&x0).unwrap_or(1.0).max(1.0);
                        let cfg = DaConfig {
                            r,
                            alpha,
                            eta_max: None,
                        };
                        let label = format!("{name} seed {seed} {:?} alpha {alpha} T {t}", geom.tags()[0]);
                        let out = da_run(&p, &geom, &x0, &cfg, t);
                        if let Ok(o) = &out {
                            da_observe(&mut m, &p, &geom, &x0, &cfg, t, o, &label);
                        }
                        runs.push((label, out));
                    }
                }
            }
        }
    }
    m.inline = inline_tally("Inline assertions (tracking, identity)", &runs);
    m
}

#[allow(clippy::too_many_arguments)]
fn da_observe(
    m: &mut DaMargins,
    p: &ProblemSpec,
    geom: &Geometry,
    x0: &Point,
    cfg: &DaConfig,
    t: usize,
    o: &RunOutput,
    label: &str,
) {
    let err = o.trace.column("track_err").expect("da column");
    let bound = o.trace.column("track_bound").expect("da column");
    for (k, (e, b)) in err.iter().zip(&bound).enumerate() {
        m.tracking.observe(e - b, Some(k), || label.to_string());
    }
    let r_bar = o.trace.column("r_bar").expect("da column");
    let mut prev = cfg.r;
    for (k, r) in r_bar.iter().enumerate() {
        m.radius.observe(prev - r, Some(k), || label.to_string());
        prev = *r;
    }
    let Some(gap0) = p.gap(o.trace.records[0].f) else {
        return;
    };
    let explored = o
        .trace
        .column("dist")
        .expect("da column")
        .into_iter()
        .fold(0.0, f64::max);
    let last = geom.primal_norm(&(&o.x_final - x0)).unwrap_or(f64::NAN);
    let d = cfg.r.max(explored).max(last);
    let l = p.smoothness(geom).unwrap_or(f64::NAN);
    match thm1_bound(gap0, cfg.r, d, l, cfg.alpha, t) {
        Ok(b) => {
            let g = o.min_grad_after_start();
            m.stationarity
                .observe((g - b) / b, None, || format!("{label}: min grad {g} vs bound {b}"));
        }
        Err(e) => m.stationarity.run_error(label, &e),
    }
}

fn da_suite(opts: &CheckOpts) -> Vec<Tally> {
    let m = da_margins(
        opts,
        &["ripple", "quad_iso", "logistic"],
        10,
        2,
        &[0.5, 0.9],
        &[64, 256],
    );
    vec![m.tracking, m.radius, m.stationarity, m.inline]
}

// ---- SC ---------------------------------------------------------------------

pub struct ScMargins {
    pub descent: Tally,
    pub lyapunov: Tally,
    pub inline: Tally,
}

/// Recomputes certified descent and the potential decrease from SC traces.
pub fn sc_margins(
    opts: &CheckOpts,
    problems: &[&str],
    dim: usize,
    alphas: &[f64],
    horizon: usize,
    geoms: &[Geometry],
) -> ScMargins {
    let mut m = ScMargins {
        descent: Tally::new(CERTIFIED_DESCENT, DESCENT_SLACK),
        lyapunov: Tally::new(LYAPUNOV_DESCENT, LYAPUNOV_SLACK),
        inline: Tally::new("", 0.0),
    };
    let mut runs = vec![];
    for name in problems {
        let p = make_problem(name, dim, 0).expect("builtin problem");
        let x0 = p.initial_point(0);
        for geom in geoms {
            let geom = opts.geom(geom.clone());
            let Ok(l) = p.smoothness(&geom) else { continue };
            for &alpha in alphas {
                let label = format!("{name} {:?} alpha {alpha}", geom.tags()[0]);
                let out = sc_run(&p, &geom, &x0, alpha, horizon);
                if let Ok(o) = &out {
                    let c = ScConstants::new(alpha).expect("alpha in range");
                    let w = c.weight / l;
                    let rs = &o.trace.records;
                    for k in 0..rs.len() {
                        let (f, e, a) = (rs[k].f, rs[k].extras[0], rs[k].extras[1]);
                        let f_next = rs.get(k + 1).map_or(o.f_final, |r| r.f);
                        m.descent
                            .observe(f_next - (f - a * a / (2.0 * l)), Some(k), || label.clone());
                        if let Some(next) = rs.get(k + 1) {
                            let e_next = next.extras[0];
                            let dphi = (f_next - f) + w * (e_next * e_next - e * e);
                            m.lyapunov
                                .observe(dphi + c.chi / l * (a * a + e * e), Some(k), || label.clone());
                        }
                    }
                }
                runs.push((label, out));
            }
        }
    }
    m.inline = inline_tally(
        &format!("Inline assertions ({ERROR_RECURSION}, {GAP_TO_CERTIFICATE}, identity)"),
        &runs,
    );
    m
}

/// Final gap against the rate bound on quad_iso, where the level-set radius
/// is analytic. In a non-Euclidean primal norm the radius comes from the
/// Frobenius curvature, since that is what bounds the level set.
pub fn thm2_margins(opts: &CheckOpts, dim: usize, horizons: &[usize], alphas: &[f64]) -> Tally {
    let mut t = Tally::new("Rate bound on quad_iso", 0.0);
    let p = make_problem("quad_iso", dim, 0).expect("builtin problem");
    for seed in 0..3 {
        let x0 = p.initial_point(seed);
        for geom in [Geometry::euclidean(), Geometry::linf()] {
            let geom = opts.geom(geom);
            let l = p.smoothness(&geom).unwrap_or(f64::NAN);
            let gap0 = p.gap(p.value(&x0)).expect("known minimum");
            let d_lev = quadratic_level_radius(gap0, p.l_frobenius());
            for &alpha in alphas {
                for &h in horizons {
                    let label = format!("seed {seed} {:?} alpha {alpha} T {h}", geom.tags()[0]);
                    match (sc_run(&p, &geom, &x0, alpha, h), thm2_bound(l, d_lev, alpha, h)) {
                        (Ok(o), Ok(b)) => {
                            let g = o.gap_final.expect("known minimum");
                            t.observe((g - b) / b, None, || format!("{label}: gap {g} vs bound {b}"));
                        }
                        (Err(e), _) | (_, Err(e)) => t.run_error(&label, &e),
                    }
                }
            }
        }
    }
    t
}

fn sc_suite(opts: &CheckOpts) -> Vec<Tally> {
    let geoms = [Geometry::euclidean(), Geometry::linf()];
    let m = sc_margins(
        opts,
        &["quad_iso", "least_squares", "logistic", "star_1d"],
        10,
        &[0.3, 0.6, 0.9],
        300,
        &geoms,
    );
    let rate = thm2_margins(opts, 10, &[32, 128, 512], &[0.5, 0.9]);
    vec![m.descent, m.lyapunov, m.inline, rate]
}

// ---- DF ---------------------------------------------------------------------

/// D-certificate never exceeds the true distance to the minimizer.
pub fn certificate_margins(
    opts: &CheckOpts,
    problems: &[&str],
    dim: usize,
    seeds: u64,
    horizon: usize,
) -> (Tally, Tally) {
    let mut t = Tally::new(CERTIFICATE_VALIDITY, VALIDITY_SLACK);
    let mut runs = vec![];
    for name in problems {
        for seed in 0..seeds {
            let p = make_problem(name, dim, seed).expect("builtin problem");
            let x0 = p.initial_point(seed + 100);
            let xs = p.x_star().expect("known minimizer").clone();
            for geom in [Geometry::euclidean(), Geometry::linf()] {
                let geom = opts.geom(geom);
                let dist = geom.primal_norm(&(&xs - &x0)).unwrap_or(f64::NAN);
                for omega in [OmegaRule::Unit, OmegaRule::Normalized] {
                    let label = format!("{name} seed {seed} {:?} omega {omega}", geom.tags()[0]);
                    let cfg = DfConfig {
                        omega,
                        ..DfConfig::for_horizon(0.9, horizon).expect("valid defaults")
                    };
                    let out = df_run(&p, &geom, &x0, &cfg, horizon, 0.0);
                    if let Ok(o) = &out {
                        for (k, d) in o.trace.column("d").expect("df column").iter().enumerate() {
                            t.observe(d - dist, Some(k), || format!("{label}: d = {d}, distance {dist}"));
                        }
                    }
                    runs.push((label, out));
                }
            }
        }
    }
    (
        t,
        inline_tally(
            &format!("Inline assertions ({MAJORIZATION}, {ONE_STEP}, identity)"),
            &runs,
        ),
    )
}

/// A frozen DF search state: everything radius_search sees at one step.
pub struct DfState {
    pub label: String,
    pub geom: Geometry,
    pub ray: RayState,
    pub grad: Point,
    pub l: f64,
    pub cfg: DfConfig,
    pub d: f64,
    pub f: f64,
}

impl DfState {
    pub fn q(&self, r: f64) -> muonscale::Result<f64> {
        majorant_eval(&self.ray, &self.grad, self.l, &self.cfg, self.d, self.f, r, &self.geom)
    }
}

/// Seeded states cycling through Euclidean, sign, spectral and mixed
/// geometries on three problem families.
pub fn df_states(count: usize, seed: u64) -> Vec<DfState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ProblemOptions::default();
    (0..count)
        .map(|i| {
            let kind = [ProblemKind::LeastSquares, ProblemKind::Logistic, ProblemKind::Star1d][i % 3];
            let (layout, geom) = match i % 4 {
                0 => (vec![BlockShape::vector("x", 6)], Geometry::euclidean()),
                1 => (vec![BlockShape::vector("x", 6)], Geometry::linf()),
                2 => (vec![BlockShape::matrix("W", 2, 3)], Geometry::spectral()),
                _ => (
                    vec![BlockShape::vector("b", 2), BlockShape::matrix("W", 2, 2)],
                    Geometry::new(vec![NormTag::Euclidean, NormTag::Spectral]),
                ),
            };
            let p = build_problem(kind, layout.clone(), i as u64, &opts).expect("builtin problem");
            let beta = rng.random_range(0.05..0.5);
            let cfg = DfConfig::new(0.9, beta, 1.0, 1.0, 6.0, OmegaRule::Unit).expect("valid config");
            let x0 = gaussian_point(&layout, &mut rng, 2.0);
            let x = gaussian_point(&layout, &mut rng, 2.0);
            let m = gaussian_point(&layout, &mut rng, 1.0);
            let ray = RayState::new(&x0, &x, &m, beta, &geom).expect("nonzero momentum");
            DfState {
                label: format!("state {i} ({}, {:?})", kind.name(), geom.tags()),
                l: p.smoothness(&geom).expect("layout matches"),
                grad: p.grad(&x),
                f: p.value(&x),
                d: rng.random_range(0.0..3.0),
                geom,
                ray,
                cfg,
            }
        })
        .collect()
}

const ZOOM_POINTS: usize = 10_000;

/// Search value against a dense grid, and convexity of `Q` by second
/// differences. The grid spans `[0, 4·max(R, 1)]` and is zoomed twice
/// (10⁴ points each) around its best point, since sign and spectral geometries give `Q`
/// kinks that one grid resolves only to slope × spacing.
pub fn search_margins(states: &[DfState], grid: usize) -> (Tally, Tally) {
    let mut value = Tally::new("Scalar search matches the grid oracle", 1e-6);
    let mut convex = Tally::new("Majorant is convex in R", 1e-9);
    for (i, s) in states.iter().enumerate() {
        let r = match radius_search(&s.ray, &s.grad, s.l, &s.cfg, s.d, s.f, &s.geom, SEARCH_TOL) {
            Ok(r) => r,
            Err(e) => {
                value.run_error(&s.label, &e);
                continue;
            }
        };
        let hi = 4.0 * r.max(1.0);
        let q = |x: f64| s.q(x).unwrap_or(f64::NAN);
        match zoomed_grid_min(q, 0.0, hi, grid, ZOOM_POINTS, 2) {
            Ok((_, best)) => {
                let found = q(r);
                value.observe((found - best).abs(), Some(i), || {
                    format!("{}: Q(R) = {found}, grid {best}", s.label)
                });
            }
            Err(e) => value.run_error(&s.label, &e),
        }
        let vals: Vec<f64> = (0..1000).map(|j| q(hi * j as f64 / 999.0)).collect();
        let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let worst = vals
            .windows(3)
            .map(|w| -(w[0] - 2.0 * w[1] + w[2]) / scale)
            .fold(f64::NEG_INFINITY, f64::max);
        convex.observe(worst, Some(i), || s.label.clone());
    }
    (value, convex)
}

/// Final gap against the rate bound, with `D = ‖x★ − x_0‖`.
pub fn thm3_margins(opts: &CheckOpts, problems: &[(&str, usize)], seeds: u64, horizons: &[usize]) -> Tally {
    let mut t = Tally::new("Rate bound (last iterate)", 1e-8);
    for (name, dim) in problems {
        for seed in 0..seeds {
            let p = make_problem(name, *dim, seed).expect("builtin problem");
            let x0 = p.initial_point(seed);
            let xs = p.x_star().expect("known minimizer");
            let gap0 = p.gap(p.value(&x0)).expect("known minimum");
            for geom in [Geometry::euclidean(), Geometry::linf()] {
                let geom = opts.geom(geom);
                let l = p.smoothness(&geom).unwrap_or(f64::NAN);
                let d = geom.primal_norm(&(xs - &x0)).unwrap_or(f64::NAN);
                for &h in horizons {
                    let label = format!("{name} seed {seed} {:?} T {h}", geom.tags()[0]);
                    let cfg = DfConfig::for_horizon(0.9, h).expect("valid defaults");
                    match (df_run(&p, &geom, &x0, &cfg, h, 0.0), thm3_bound(gap0, l, d, &cfg, h)) {
                        (Ok(o), Ok(b)) => {
                            let g = o.gap_final.expect("known minimum");
                            t.observe((g - b) / b.max(f64::MIN_POSITIVE), None, || {
                                format!("{label}: gap {g} vs bound {b}")
                            });
                        }
                        (Err(e), _) | (_, Err(e)) => t.run_error(&label, &e),
                    }
                }
            }
        }
    }
    t
}

fn df_suite(opts: &CheckOpts) -> Vec<Tally> {
    let (cert, inline) = certificate_margins(opts, &["quad_iso", "least_squares", "logistic"], 8, 3, 200);
    let (value, convex) = search_margins(&df_states(40, 9), 100_000);
    let rate = thm3_margins(
        opts,
        &[("quad_iso", 10), ("least_squares", 10), ("star_1d", 5)],
        1,
        &[32, 128, 512],
    );
    vec![cert, value, convex, inline, rate]
}

// ---- practical ----------------------------------------------------------------

/// Counts minibatch gradient calls independently of the run's own counter.
pub struct Counting<'a> {
    pub inner: &'a SoftmaxModel,
    pub calls: Cell<usize>,
}

impl StochasticObjective for Counting<'_> {
    fn layout(&self) -> Layout {
        self.inner.layout()
    }

    fn samples(&self) -> usize {
        self.inner.samples()
    }

    fn batch_loss_grad(&self, x: &Point, batch: &[usize]) -> (f64, Point) {
        self.calls.set(self.calls.get() + 1);
        self.inner.batch_loss_grad(x, batch)
    }

    fn full_loss(&self, x: &Point) -> f64 {
        self.inner.full_loss(x)
    }
}

pub struct PracticalMargins {
    pub decrease: Tally,
    pub range: Tally,
    pub one_grad: Tally,
}

/// Minibatch loss drop (last decile vs first), scale range and gradient
/// count on the tiny softmax model.
pub fn practical_margins(seeds: u64, horizon: usize) -> PracticalMargins {
    let cfg = PracticalCfg::default();
    let mut m = PracticalMargins {
        // Strict decrease: the limit sits just below zero.
        decrease: Tally::new("Loss decreases (last decile vs first)", -f64::MIN_POSITIVE),
        range: Tally::new("Base scale stays in range", 0.0),
        one_grad: Tally::new("One gradient evaluation per step", 0.0),
    };
    for seed in 0..seeds {
        let label = format!("seed {seed}");
        let model = match SoftmaxModel::synthetic(SOFTMAX_CLASSES, SOFTMAX_FEATURES, SOFTMAX_SAMPLES, seed) {
            Ok(model) => model,
            Err(e) => {
                m.decrease.run_error(&label, &e);
                continue;
            }
        };
        let counting = Counting {
            inner: &model,
            calls: Cell::new(0),
        };
        let out = match practical_run(
            &counting,
            &model.initial_point(seed),
            &cfg,
            DEFAULT_BATCH,
            horizon,
            seed,
        ) {
            Ok(o) => o,
            Err(e) => {
                m.decrease.run_error(&label, &e);
                continue;
            }
        };
        let losses = out.trace.values();
        let tenth = (losses.len() / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (first, last) = (mean(&losses[..tenth]), mean(&losses[losses.len() - tenth..]));
        m.decrease
            .observe(last - first, None, || format!("{label}: first {first}, last {last}"));
        for (k, b) in out
            .trace
            .column("base_scale")
            .expect("practical column")
            .iter()
            .enumerate()
        {
            m.range.observe((cfg.eta_min - b).max(b - cfg.eta_max), Some(k), || {
                format!("{label}: base {b}")
            });
        }
        let calls = counting.calls.get();
        m.one_grad.observe((calls as f64 - horizon as f64).abs(), None, || {
            format!("{label}: {calls} calls")
        });
        m.one_grad
            .observe((out.grad_evals as f64 - horizon as f64).abs(), None, || {
                format!("{label}: run reports {}", out.grad_evals)
            });
    }
    m
}

fn practical_suite() -> Vec<Tally> {
    let m = practical_margins(3, 500);
    vec![m.decrease, m.range, m.one_grad]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_keeps_worst_and_first_failure() {
        let mut t = Tally::new("x", 0.5);
        t.observe(0.1, Some(0), String::new);
        t.observe(0.3, Some(1), String::new);
        assert!(t.passed());
        t.observe(0.9, Some(2), || "first".into());
        t.observe(2.0, Some(3), || "second".into());
        assert_eq!(t.worst, Some(2.0));
        let f = t.failure.unwrap();
        assert_eq!((f.lemma.as_str(), f.step), ("x", Some(2)));
    }

    #[test]
    fn nan_excess_fails() {
        let mut t = Tally::new("x", 1.0);
        t.observe(f64::NAN, None, String::new);
        assert!(!t.passed());
    }

    #[test]
    fn invariant_errors_carry_lemma_and_step() {
        let mut t = Tally::new("runs", 0.0);
        t.run_error(
            "lbl",
            &Error::Invariant {
                lemma: "L",
                step: 7,
                detail: "d".into(),
            },
        );
        let f = t.failure.unwrap();
        assert_eq!((f.lemma.as_str(), f.step), ("L", Some(7)));
    }

    #[test]
    fn pairing_flags_the_negated_oracle() {
        let bad = CheckOpts {
            fault: Some(Fault::NegatedLmo),
        };
        let t = lmo_pairing(&bad, 3, 0);
        assert_eq!(t.failure.unwrap().lemma, OPTIMALITY_IDENTITY);
        assert!(lmo_pairing(&CheckOpts::default(), 20, 0).passed());
    }
}
