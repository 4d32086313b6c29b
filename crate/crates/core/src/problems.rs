//! Test objectives with analytic gradients and smoothness constants.
//!
//! Every objective acts on the flattened entries of a point, so any layout
//! (one vector, one matrix, several blocks) can host any problem. Smoothness
//! constants are stored for the Frobenius geometry and converted to the
//! requested geometry with [`Geometry::smoothness_factor`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::point::{layout_len, validate_layout, BlockShape, Layout, Point};

/// Ridge weight added to the logistic loss so a minimizer always exists.
pub const LOGISTIC_RIDGE: f64 = 1e-3;
/// Safety factor applied to numerically measured smoothness constants.
pub const MEASURED_L_SAFETY: f64 = 1.05;
/// Half-width of the second-difference scan that measures the `star_1d` constant.
pub const STAR_SCAN_HALF_WIDTH: f64 = 20.0;
/// Default overdetermination of the least-squares design.
pub const LSQ_ROWS_PER_DIM: usize = 4;
/// Iteration cap for the logistic reference minimizer.
pub const LOGISTIC_REFERENCE_STEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    QuadIso,
    LeastSquares,
    Logistic,
    Ripple,
    Star1d,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::QuadIso,
        ProblemKind::LeastSquares,
        ProblemKind::Logistic,
        ProblemKind::Ripple,
        ProblemKind::Star1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::QuadIso => "quad_iso",
            ProblemKind::LeastSquares => "least_squares",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Ripple => "ripple",
            ProblemKind::Star1d => "star_1d",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown problem '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProblemFlags {
    pub convex: bool,
    pub star_convex_verified: bool,
    pub nonconvex: bool,
}

impl ProblemFlags {
    /// Whether star-convexity toward `x_star` can be relied on.
    pub fn star_convex(&self) -> bool {
        self.convex || self.star_convex_verified
    }
}

#[derive(Clone, Debug)]
pub struct ProblemOptions {
    /// Curvature of `quad_iso`.
    pub quad_l: f64,
    /// Rows of the least-squares design matrix; `None` means `LSQ_ROWS_PER_DIM` per column.
    pub lsq_rows: Option<usize>,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            quad_l: 1.0,
            lsq_rows: None,
        }
    }
}

#[derive(Clone, Debug)]
enum Model {
    QuadIso {
        l: f64,
    },
    LeastSquares {
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    Logistic {
        features: DMatrix<f64>,
        labels: DVector<f64>,
    },
    Ripple,
    Star1d,
}

/// Objective oracle with its smoothness constant and, when available, its
/// minimizer.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    kind: ProblemKind,
    layout: Layout,
    seed: u64,
    model: Model,
    /// Smoothness constant with respect to the Frobenius norm.
    l_frobenius: f64,
    x_star: Option<Point>,
    f_star: Option<f64>,
    flags: ProblemFlags,
}

/// Builds one of the named problems on a single vector block of length `dim`.
pub fn make_problem(name: &str, dim: usize, seed: u64) -> Result<ProblemSpec> {
    let kind: ProblemKind = name.parse()?;
    build_problem(
        kind,
        vec![BlockShape::vector("x", dim)],
        seed,
        &ProblemOptions::default(),
    )
}

pub fn build_problem(kind: ProblemKind, layout: Layout, seed: u64, opts: &ProblemOptions) -> Result<ProblemSpec> {
    validate_layout(&layout)?;
    let dim = layout_len(&layout);
    if dim == 0 {
        return Err(Error::config(format!("{kind} requires dim >= 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = Point::zeros(&layout);
    let mut spec = match kind {
        ProblemKind::QuadIso => {
            if !(opts.quad_l > 0.0 && opts.quad_l.is_finite()) {
                return Err(Error::config("quad_iso requires L > 0"));
            }
            ProblemSpec {
                kind,
                layout,
                seed,
                model: Model::QuadIso { l: opts.quad_l },
                l_frobenius: opts.quad_l,
                x_star: Some(zero),
                f_star: Some(0.0),
                flags: ProblemFlags {
                    convex: true,
                    ..Default::default()
                },
            }
        }
        ProblemKind::LeastSquares => {
            let rows = opts.lsq_rows.unwrap_or(LSQ_ROWS_PER_DIM * dim);
            if rows == 0 {
                return Err(Error::config("least_squares requires at least one row"));
            }
            let a = DMatrix::from_fn(rows, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xs = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = &a * &xs;
            let l = safe_top_eigenvalue(&(a.transpose() * &a));
            ProblemSpec {
                kind,
                model: Model::LeastSquares { a, b },
                x_star: Some(Point::from_flat(&layout, xs.as_slice())?),
                layout,
                seed,
                l_frobenius: l,
                f_star: Some(0.0),
                flags: ProblemFlags {
                    convex: true,
                    ..Default::default()
                },
            }
        }
        ProblemKind::Logistic => {
            let n = (10 * dim).max(40);
            let features = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w_true = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let labels = DVector::from_fn(n, |i, _| {
                let noise: f64 = rng.sample(StandardNormal);
                if features.row(i).transpose().dot(&w_true) + noise >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            });
            let gram = features.transpose() * &features;
            let l = safe_top_eigenvalue(&gram) / (4.0 * n as f64) + LOGISTIC_RIDGE;
            let mut spec = ProblemSpec {
                kind,
                layout,
                seed,
                model: Model::Logistic { features, labels },
                l_frobenius: l,
                x_star: None,
                f_star: None,
                flags: ProblemFlags {
                    convex: true,
                    ..Default::default()
                },
            };
            let (x_ref, f_ref) =
                crate::testkit::reference_minimize_until(&spec, &zero, LOGISTIC_REFERENCE_STEPS, 1e-14)?;
            spec.x_star = Some(x_ref);
            spec.f_star = Some(f_ref);
            spec
        }
        ProblemKind::Ripple => ProblemSpec {
            kind,
            layout,
            seed,
            model: Model::Ripple,
            l_frobenius: 3.0,
            x_star: Some(zero),
            f_star: Some(0.0),
            flags: ProblemFlags {
                nonconvex: true,
                ..Default::default()
            },
        },
        ProblemKind::Star1d => {
            let l = MEASURED_L_SAFETY * star_1d_curvature_scan(STAR_SCAN_HALF_WIDTH, 400_000);
            ProblemSpec {
                kind,
                layout,
                seed,
                model: Model::Star1d,
                l_frobenius: l,
                x_star: Some(zero),
                f_star: Some(0.0),
                flags: ProblemFlags {
                    nonconvex: true,
                    ..Default::default()
                },
            }
        }
    };
    if kind == ProblemKind::Star1d {
        let check = star_convexity_check(&spec, 10_000, STAR_SCAN_HALF_WIDTH)?;
        if !check.passed {
            return Err(Error::invariant(
                "star-convexity screen",
                0,
                format!("worst margin {}", check.worst_margin),
            ));
        }
        spec.flags.star_convex_verified = true;
    }
    Ok(spec)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration to 1e-10
/// relative change, nudged up by 1e-9 relative since the Rayleigh quotient
/// approaches the top eigenvalue from below.
pub fn safe_top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    power_iteration(m, 1e-10, 100_000) * (1.0 + 1e-9)
}

pub fn power_iteration(m: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    // Deterministic start with no special alignment to any eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - lambda).abs() <= rel_tol * next.abs() {
            return next.max(lambda);
        }
        lambda = next;
    }
    lambda
}

fn star_phi(t: f64) -> f64 {
    let a = t.abs();
    a * (1.0 - (-a).exp())
}

fn star_dphi(t: f64) -> f64 {
    let a = t.abs();
    let e = (-a).exp();
    // The bracket vanishes at t = 0, so the sign convention there is moot.
    t.signum() * (1.0 - e + a * e)
}

/// Max |second difference| of the `star_1d` profile over `[-half, half]`.
pub fn star_1d_curvature_scan(half: f64, intervals: usize) -> f64 {
    let h = 2.0 * half / intervals as f64;
    let step = 1e-4;
    (0..=intervals)
        .map(|i| {
            let t = -half + i as f64 * h;
            ((star_phi(t + step) - 2.0 * star_phi(t) + star_phi(t - step)) / (step * step)).abs()
        })
        .fold(0.0, f64::max)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ProblemSpec {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flags(&self) -> ProblemFlags {
        self.flags
    }

    pub fn x_star(&self) -> Option<&Point> {
        self.x_star.as_ref()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    /// Smoothness constant for the Frobenius norm.
    pub fn l_frobenius(&self) -> f64 {
        self.l_frobenius
    }

    /// Smoothness constant valid for `geom` on this problem's layout.
    pub fn smoothness(&self, geom: &Geometry) -> Result<f64> {
        Ok(self.l_frobenius * geom.smoothness_factor(&self.layout)?)
    }

    pub fn gap(&self, f: f64) -> Option<f64> {
        self.f_star.map(|fs| f - fs)
    }

    fn flat(&self, x: &Point) -> DVector<f64> {
        assert_eq!(x.layout(), self.layout, "point layout does not match problem");
        DVector::from_vec(x.to_flat())
    }

    fn unflat(&self, v: &DVector<f64>) -> Point {
        Point::from_flat(&self.layout, v.as_slice()).expect("layout length")
    }

    pub fn value(&self, x: &Point) -> f64 {
        let v = self.flat(x);
        match &self.model {
            Model::QuadIso { l } => 0.5 * l * v.norm_squared(),
            Model::LeastSquares { a, b } => 0.5 * (a * &v - b).norm_squared(),
            Model::Logistic { features, labels } => {
                let z = features * &v;
                let n = labels.len() as f64;
                let loss: f64 = z.iter().zip(labels.iter()).map(|(zi, yi)| softplus(-yi * zi)).sum();
                loss / n + 0.5 * LOGISTIC_RIDGE * v.norm_squared()
            }
            Model::Ripple => v.iter().map(|t| 0.5 * t * t + t.sin().powi(2)).sum(),
            Model::Star1d => v.iter().map(|t| star_phi(*t)).sum(),
        }
    }

    pub fn grad(&self, x: &Point) -> Point {
        let v = self.flat(x);
        let g = match &self.model {
            Model::QuadIso { l } => &v * *l,
            Model::LeastSquares { a, b } => a.transpose() * (a * &v - b),
            Model::Logistic { features, labels } => {
                let z = features * &v;
                let n = labels.len() as f64;
                let coef = DVector::from_fn(labels.len(), |i, _| -labels[i] * sigmoid(-labels[i] * z[i]) / n);
                features.transpose() * coef + &v * LOGISTIC_RIDGE
            }
            Model::Ripple => v.map(|t| t + (2.0 * t).sin()),
            Model::Star1d => v.map(star_dphi),
        };
        self.unflat(&g)
    }

    /// Seeded starting point: standard normal entries, or uniform on
    /// `[-5, 5]` for `star_1d` so runs cross its non-convex region.
    pub fn initial_point(&self, seed: u64) -> Point {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_1A17);
        let n = layout_len(&self.layout);
        let flat: Vec<f64> = match self.kind {
            ProblemKind::Star1d => (0..n).map(|_| rng.random_range(-5.0..5.0)).collect(),
            _ => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        };
        Point::from_flat(&self.layout, &flat).expect("layout length")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarCheck {
    pub passed: bool,
    /// Smallest `⟨∇f(x), x − x★⟩ − (f(x) − f★)` seen.
    pub worst_margin: f64,
    pub samples: usize,
}

/// Screens `f(x) − f★ ≤ ⟨∇f(x), x − x★⟩` on seeded points of the box of
/// half-width `radius` around `x★`.
pub fn star_convexity_check(p: &ProblemSpec, n_samples: usize, radius: f64) -> Result<StarCheck> {
    let xs = p
        .x_star()
        .ok_or_else(|| Error::Precondition(format!("{} has no known minimizer", p.name())))?;
    let fs = p.f_star.unwrap_or_else(|| p.value(xs));
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x57A8);
    let n = layout_len(&p.layout);
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        let offset: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
        let x = xs + &Point::from_flat(&p.layout, &offset)?;
        let margin = p.grad(&x).dot(&(&x - xs)) - (p.value(&x) - fs);
        worst = worst.min(margin);
    }
    Ok(StarCheck {
        passed: worst >= -1e-8,
        worst_margin: worst,
        samples: n_samples,
    })
}

/// Max over coordinates of `|fd − grad| / max(1, |grad|)` with central
/// differences of step `h`.
pub fn finite_diff_check(p: &ProblemSpec, x: &Point, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let g = p.grad(x).to_flat();
    let base = x.to_flat();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (p.value(&Point::from_flat(&p.layout, &plus)?) - p.value(&Point::from_flat(&p.layout, &minus)?))
            / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
    }
    Ok(worst)
}
