//! Stochastic Frobenius-proxy variant of the distance-free rule.
//!
//! Per step the optimizer reuses the minibatch gradient it already has:
//! Newton–Schulz directions per matrix block, four Frobenius aggregates, a
//! scalar distance proxy, and a scale chosen by a capped grid search on a
//! one-dimensional score. No extra forward or backward passes are made.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{orthogonalize, Orthogonalization, NS_DEFAULT_ITERS};
use crate::muon::MomentumState;
use crate::point::{BlockKind, BlockShape, Layout, Point};
use crate::trace::{finite_or_diverged, Algorithm, RunOutput, Trace, TraceRecord};

/// Floor on `|s|` in the scalar distance proxy.
pub const PROXY_EPS: f64 = 1e-12;
/// Fraction of the horizon spent in linear warmup.
pub const WARMUP_FRACTION: f64 = 0.05;

pub const EXTRAS: [&str; 4] = ["base_scale", "schedule", "d_proxy", "candidate"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PracticalCfg {
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_init: f64,
    /// Weight of the previous scale in the smoothed update.
    pub smoothing: f64,
    pub grid_points: usize,
    pub refine_steps: usize,
    pub c_step: f64,
    pub c_center: f64,
    pub c_proxy: f64,
    /// EMA weight of the newest gradient in the momentum.
    pub momentum_alpha: f64,
}

impl Default for PracticalCfg {
    fn default() -> Self {
        Self {
            eta_min: 0.006,
            eta_max: 0.03,
            eta_init: 0.015,
            smoothing: 0.70,
            grid_points: 21,
            refine_steps: 6,
            c_step: 0.10,
            c_center: 0.02,
            c_proxy: 0.10,
            momentum_alpha: 0.1,
        }
    }
}

impl PracticalCfg {
    /// Default settings without the center penalty.
    pub fn no_center() -> Self {
        Self {
            c_center: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eta_min
            && self.eta_min <= self.eta_init
            && self.eta_init <= self.eta_max
            && self.eta_max.is_finite())
        {
            return Err(Error::config(format!(
                "need 0 < eta_min <= eta_init <= eta_max (got {}, {}, {})",
                self.eta_min, self.eta_init, self.eta_max
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config(format!(
                "smoothing must lie in [0, 1), got {}",
                self.smoothing
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points must be >= 2"));
        }
        for (name, v) in [
            ("c_step", self.c_step),
            ("c_center", self.c_center),
            ("c_proxy", self.c_proxy),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        crate::muon::check_alpha(self.momentum_alpha, true)
    }
}

/// Frobenius aggregates over the updated blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// `Σ‖u‖²`.
    pub update_sq: f64,
    /// `Σ⟨y, u⟩`.
    pub center_dot_update: f64,
    /// `Σ‖y‖²`.
    pub center_sq: f64,
    /// `Σ⟨g, u⟩`.
    pub grad_dot_update: f64,
}

/// Sums over `(u, g, y)` triples: direction, gradient, displacement from start.
pub fn aggregate_stats<'a, I>(blocks: I) -> Result<StepStats>
where
    I: IntoIterator<Item = (&'a DMatrix<f64>, &'a DMatrix<f64>, &'a DMatrix<f64>)>,
{
    let mut st = StepStats::default();
    for (i, (u, g, y)) in blocks.into_iter().enumerate() {
        if u.shape() != g.shape() || u.shape() != y.shape() {
            return Err(Error::config(format!(
                "block {i}: shapes {:?}, {:?}, {:?} differ",
                u.shape(),
                g.shape(),
                y.shape()
            )));
        }
        st.update_sq += u.norm_squared();
        st.center_dot_update += y.dot(u);
        st.center_sq += y.norm_squared();
        st.grad_dot_update += g.dot(u);
    }
    Ok(st)
}

/// `−ηG + c_step·η²A + c_center·Σ‖y − ηu‖² + c_proxy·(η − d)²`.
pub fn practical_score(eta: f64, st: &StepStats, cfg: &PracticalCfg, d_proxy: f64) -> f64 {
    let a = st.update_sq;
    -eta * st.grad_dot_update
        + cfg.c_step * eta * eta * a
        + cfg.c_center * (st.center_sq - 2.0 * eta * st.center_dot_update + eta * eta * a)
        + cfg.c_proxy * (eta - d_proxy).powi(2)
}

/// Best raw candidate: log-spaced grid, then shrinking three-point
/// refinement around the winner, clamped to `[eta_min, eta_max]`.
pub fn scale_candidate(st: &StepStats, cfg: &PracticalCfg, d_proxy: f64) -> f64 {
    let (lo, hi) = (cfg.eta_min.ln(), cfg.eta_max.ln());
    // Endpoints are used exactly so the clamp can return the cap itself.
    let eta_at = |t: f64| {
        if t <= lo {
            cfg.eta_min
        } else if t >= hi {
            cfg.eta_max
        } else {
            t.exp()
        }
    };
    let score = |t: f64| practical_score(eta_at(t), st, cfg, d_proxy);
    let n = cfg.grid_points;
    let mut h = (hi - lo) / (n - 1) as f64;
    let (mut best_log, mut best) = (lo, score(lo));
    for i in 1..n {
        let t = if i == n - 1 { hi } else { lo + i as f64 * h };
        let v = score(t);
        if v < best {
            (best_log, best) = (t, v);
        }
    }
    for _ in 0..cfg.refine_steps {
        let centre = best_log;
        for t in [centre - h, centre + h] {
            let t = t.clamp(lo, hi);
            let v = score(t);
            if v < best {
                (best_log, best) = (t, v);
            }
        }
        h /= 2.0;
    }
    eta_at(best_log)
}

/// `smoothing·prev + (1 − smoothing)·candidate`.
pub fn select_scale(st: &StepStats, cfg: &PracticalCfg, prev_scale: f64, d_proxy: f64) -> f64 {
    smooth(cfg, prev_scale, scale_candidate(st, cfg, d_proxy))
}

fn smooth(cfg: &PracticalCfg, prev: f64, candidate: f64) -> f64 {
    (cfg.smoothing * prev + (1.0 - cfg.smoothing) * candidate).clamp(cfg.eta_min, cfg.eta_max)
}

/// Scalar analogue of the distance certificate with Frobenius inner products.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistanceProxy {
    pub s: f64,
    pub b: f64,
    pub d: f64,
}

impl DistanceProxy {
    pub fn update(&mut self, grad_dot_update: f64, grad_dot_center: f64) -> f64 {
        self.s += grad_dot_update;
        self.b -= grad_dot_center;
        self.d = self.d.max(self.b.max(0.0) / self.s.abs().max(PROXY_EPS));
        self.d
    }
}

/// Multiplier at step `t` of `horizon`: linear warmup from 0, then cosine decay to 0.
pub fn warmup_cosine(t: usize, horizon: usize) -> f64 {
    let horizon = horizon.max(1);
    let warm = ((WARMUP_FRACTION * horizon as f64).ceil() as usize).max(1);
    if t < warm {
        return t as f64 / warm as f64;
    }
    if horizon <= warm {
        return 1.0;
    }
    let progress = ((t - warm) as f64 / (horizon - warm) as f64).min(1.0);
    0.5 * (1.0 + (PI * progress).cos())
}

/// A finite-sum objective sampled in minibatches.
pub trait StochasticObjective {
    fn layout(&self) -> Layout;
    fn samples(&self) -> usize;
    /// Mean loss and gradient over the given sample indices.
    fn batch_loss_grad(&self, x: &Point, batch: &[usize]) -> (f64, Point);
    /// Mean loss over all samples.
    fn full_loss(&self, x: &Point) -> f64;
}

/// Multinomial logistic regression with a single weight matrix (classes × features).
#[derive(Clone, Debug)]
pub struct SoftmaxModel {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl SoftmaxModel {
    /// Gaussian features labelled by a random linear teacher plus noise.
    pub fn synthetic(classes: usize, dim: usize, samples: usize, seed: u64) -> Result<Self> {
        if classes < 2 || dim == 0 || samples == 0 {
            return Err(Error::config(
                "softmax model needs >= 2 classes, dim >= 1, samples >= 1",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let teacher = DMatrix::from_fn(classes, dim, |_, _| normal());
        let features = DMatrix::from_fn(dim, samples, |_, _| normal());
        let logits = &teacher * &features;
        let labels = (0..samples)
            .map(|j| {
                (0..classes)
                    .map(|c| logits[(c, j)] + 0.5 * normal())
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (c, v)| if v > acc.1 { (c, v) } else { acc },
                    )
                    .0
            })
            .collect();
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Small seeded Gaussian weights.
    pub fn initial_point(&self, seed: u64) -> Point {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(self.classes, self.dim(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            0.1 * v
        });
        Point::from_flat(&self.layout(), w.as_slice()).expect("layout matches")
    }

    fn sample_loss(&self, w: &DMatrix<f64>, j: usize, grad: Option<&mut DMatrix<f64>>) -> f64 {
        let xj = self.features.column(j);
        let z = w * xj;
        let zmax = z.max();
        let exps = z.map(|v| (v - zmax).exp());
        let total = exps.sum();
        let loss = total.ln() + zmax - z[self.labels[j]];
        if let Some(grad) = grad {
            let mut p = exps / total;
            p[self.labels[j]] -= 1.0;
            *grad += p * xj.transpose();
        }
        loss
    }
}

impl StochasticObjective for SoftmaxModel {
    fn layout(&self) -> Layout {
        vec![BlockShape::matrix("W", self.classes, self.dim())]
    }

    fn samples(&self) -> usize {
        self.labels.len()
    }

    fn batch_loss_grad(&self, x: &Point, batch: &[usize]) -> (f64, Point) {
        let w = &x.blocks()[0].data;
        let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
        let mut loss = 0.0;
        for &j in batch {
            loss += self.sample_loss(w, j, Some(&mut grad));
        }
        let n = batch.len().max(1) as f64;
        let g = Point::from_flat(&self.layout(), (grad / n).as_slice()).expect("layout matches");
        (loss / n, g)
    }

    fn full_loss(&self, x: &Point) -> f64 {
        let w = &x.blocks()[0].data;
        (0..self.samples()).map(|j| self.sample_loss(w, j, None)).sum::<f64>() / self.samples() as f64
    }
}

/// Normalized update direction per block: Newton–Schulz for matrices,
/// `m/‖m‖` for vectors, zero where the momentum vanishes.
fn block_directions(m: &Point, iters: usize) -> Result<Point> {
    let mut out = m.clone();
    for b in out.blocks_mut() {
        if b.data.norm() == 0.0 {
            continue;
        }
        b.data = match b.kind {
            BlockKind::Matrix => orthogonalize(&b.data, Orthogonalization::NewtonSchulz { iters })?,
            BlockKind::Vector => &b.data / b.data.norm(),
        };
    }
    Ok(out)
}

/// Minibatch training with the practical scale rule.
pub fn practical_run(
    model: &impl StochasticObjective,
    x0: &Point,
    cfg: &PracticalCfg,
    batch: usize,
    horizon: usize,
    seed: u64,
) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::config("horizon T must be >= 1"));
    }
    cfg.validate()?;
    if batch == 0 || batch > model.samples() {
        return Err(Error::config(format!(
            "batch must lie in [1, {}], got {batch}",
            model.samples()
        )));
    }
    if x0.layout() != model.layout() {
        return Err(Error::config(format!(
            "initial point {x0} does not match the model layout"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.clone();
    let mut momentum: Option<MomentumState> = None;
    let mut proxy = DistanceProxy::default();
    let mut base = cfg.eta_init;
    let mut grad_evals = 0usize;
    let mut trace = Trace::new(Algorithm::DfPractical, &EXTRAS);

    for t in 0..horizon {
        let idx = sample(&mut rng, model.samples(), batch).into_vec();
        let (loss, g) = model.batch_loss_grad(&x, &idx);
        grad_evals += 1;
        let loss = finite_or_diverged(t, loss)?;
        let u = match momentum.as_mut() {
            Some(state) => block_directions(state.update(&g)?, NS_DEFAULT_ITERS)?,
            None => {
                let state = MomentumState::warm_start(&g, cfg.momentum_alpha)?;
                let u = block_directions(&state.m, NS_DEFAULT_ITERS)?;
                momentum = Some(state);
                u
            }
        };
        let y = &x - x0;
        let st = aggregate_stats(
            u.blocks()
                .iter()
                .zip(g.blocks())
                .zip(y.blocks())
                .map(|((u, g), y)| (&u.data, &g.data, &y.data)),
        )?;
        let d = proxy.update(st.grad_dot_update, g.dot(&y));
        let candidate = scale_candidate(&st, cfg, d);
        base = smooth(cfg, base, candidate);
        let schedule = warmup_cosine(t, horizon);
        let eff = schedule * base;
        trace.push(TraceRecord {
            k: t,
            f: loss,
            gap: None,
            grad_dual_norm: g.norm_fro(),
            scale: eff,
            extras: vec![base, schedule, d, candidate],
        });
        x = x.axpy(-eff, &u);
        if !x.is_finite() {
            return Err(Error::Divergence {
                step: t + 1,
                value: f64::NAN,
            });
        }
    }

    let f_final = finite_or_diverged(horizon, model.full_loss(&x))?;
    Ok(RunOutput {
        trace,
        x_final: x,
        f_final,
        gap_final: None,
        grad_dual_norm_final: f64::NAN,
        grad_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::grid_min;
    use approx::assert_relative_eq;
    use std::cell::Cell;

    fn stats(a: f64, b: f64, c: f64, g: f64) -> StepStats {
        StepStats {
            update_sq: a,
            center_dot_update: b,
            center_sq: c,
            grad_dot_update: g,
        }
    }

    #[test]
    fn aggregate_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(aggregate_stats([(&i2, &i2, &z)]).unwrap(), stats(2.0, 0.0, 0.0, 2.0));
        assert_eq!(aggregate_stats(std::iter::empty()).unwrap(), StepStats::default());
        let bad = DMatrix::<f64>::zeros(2, 3);
        assert!(aggregate_stats([(&i2, &bad, &z)]).is_err());
    }

    #[test]
    fn aggregate_matches_elementwise_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mat = || DMatrix::from_fn(2, 2, |_, _| StandardNormal.sample(&mut rng));
        let blocks: Vec<[DMatrix<f64>; 3]> = (0..2).map(|_| [mat(), mat(), mat()]).collect();
        let st = aggregate_stats(blocks.iter().map(|[u, g, y]| (u, g, y))).unwrap();
        let mut want = [0.0; 4];
        for [u, g, y] in &blocks {
            for i in 0..2 {
                for j in 0..2 {
                    want[0] += u[(i, j)] * u[(i, j)];
                    want[1] += y[(i, j)] * u[(i, j)];
                    want[2] += y[(i, j)] * y[(i, j)];
                    want[3] += g[(i, j)] * u[(i, j)];
                }
            }
        }
        assert_relative_eq!(st.update_sq, want[0], epsilon = 1e-14);
        assert_relative_eq!(st.center_dot_update, want[1], epsilon = 1e-14);
        assert_relative_eq!(st.center_sq, want[2], epsilon = 1e-14);
        assert_relative_eq!(st.grad_dot_update, want[3], epsilon = 1e-14);
    }

    #[test]
    fn score_examples() {
        let cfg = PracticalCfg {
            c_center: 0.0,
            c_proxy: 0.0,
            ..PracticalCfg::default()
        };
        let st = stats(3.0, 0.7, 2.0, 0.9);
        let vertex = 0.9 / (0.2 * 3.0);
        let (r, _) = grid_min(|e| practical_score(e, &st, &cfg, 0.0), 0.0, 3.0, 300_001).unwrap();
        assert!((r - vertex).abs() <= 1e-5);

        let cfg = PracticalCfg::default();
        assert_relative_eq!(
            practical_score(0.0, &st, &cfg, 0.4),
            0.02 * 2.0 + 0.1 * 0.16,
            epsilon = 1e-15
        );

        let cfg0 = PracticalCfg {
            c_proxy: 0.0,
            ..PracticalCfg::default()
        };
        let st0 = stats(3.0, 0.0, 2.0, 0.0);
        let (r, _) = grid_min(|e| practical_score(e, &st0, &cfg0, 0.0), 0.0, 1.0, 1001).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn selection_examples() {
        let cfg = PracticalCfg::default();
        // Strong descent pushes the vertex past the cap.
        let st = stats(1.0, 0.0, 0.0, 10.0);
        assert_eq!(scale_candidate(&st, &cfg, 0.0), cfg.eta_max);
        assert_relative_eq!(select_scale(&st, &cfg, 0.015, 0.0), 0.0195, epsilon = 1e-15);
    }

    #[test]
    fn refined_candidate_tracks_dense_grid() {
        let cfg = PracticalCfg {
            c_center: 0.0,
            c_proxy: 0.0,
            ..PracticalCfg::default()
        };
        for g in [0.5, 1.0, 2.0, 3.3] {
            let st = stats(200.0, 0.0, 0.0, g);
            let (r, _) = grid_min(|e| practical_score(e, &st, &cfg, 0.0), cfg.eta_min, cfg.eta_max, 10_000).unwrap();
            let c = scale_candidate(&st, &cfg, 0.0);
            // Offset of the last refinement probe, in log-scale.
            let cell = (cfg.eta_max / cfg.eta_min).ln() / 20.0 / 2f64.powi(cfg.refine_steps as i32 - 1);
            assert!((c.ln() - r.ln()).abs() <= cell, "g = {g}: {c} vs {r}");
        }
    }

    #[test]
    fn proxy_examples() {
        let mut p = DistanceProxy::default();
        assert_eq!(p.update(2.0, 0.0), 0.0);
        assert_eq!(p.update(0.0, -1.0), 0.5);
        assert_eq!(p.update(0.0, 3.0), 0.5);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(warmup_cosine(0, 100), 0.0);
        assert_relative_eq!(warmup_cosine(2, 100), 0.4);
        assert_eq!(warmup_cosine(5, 100), 1.0);
        assert!(warmup_cosine(99, 100) < 0.01);
        assert_eq!(warmup_cosine(0, 1), 0.0);
    }

    struct Counting<'a> {
        inner: &'a SoftmaxModel,
        calls: Cell<usize>,
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

    #[test]
    fn training_reduces_loss_with_one_gradient_per_step() {
        let model = SoftmaxModel::synthetic(3, 8, 512, 1).unwrap();
        let counted = Counting {
            inner: &model,
            calls: Cell::new(0),
        };
        let x0 = model.initial_point(2);
        let cfg = PracticalCfg::default();
        let out = practical_run(&counted, &x0, &cfg, 32, 500, 3).unwrap();
        assert_eq!(counted.calls.get(), 500);
        assert_eq!(out.grad_evals, 500);
        let v = out.trace.values();
        let head = v[..50].iter().sum::<f64>() / 50.0;
        let tail = v[450..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "{tail} >= {head}");
        let base = out.trace.column("base_scale").unwrap();
        assert!(base.iter().all(|b| (cfg.eta_min..=cfg.eta_max).contains(b)));
        assert!(base
            .windows(2)
            .all(|w| (w[1] - w[0]).abs() <= (1.0 - cfg.smoothing) * (cfg.eta_max - cfg.eta_min) + 1e-15));
    }

    #[test]
    fn first_step_leaves_parameters_unchanged() {
        let model = SoftmaxModel::synthetic(3, 4, 64, 0).unwrap();
        let x0 = model.initial_point(0);
        let out = practical_run(&model, &x0, &PracticalCfg::default(), 8, 1, 0).unwrap();
        assert_eq!(out.trace.records[0].scale, 0.0);
        assert_eq!(out.x_final, x0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let model = SoftmaxModel::synthetic(3, 8, 128, 9).unwrap();
        let x0 = model.initial_point(1);
        let a = practical_run(&model, &x0, &PracticalCfg::no_center(), 16, 60, 4).unwrap();
        let b = practical_run(&model, &x0, &PracticalCfg::no_center(), 16, 60, 4).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x_final, b.x_final);
    }

    #[test]
    fn translation_invariance_without_center_or_proxy() {
        let cfg = PracticalCfg {
            c_center: 0.0,
            c_proxy: 0.0,
            ..PracticalCfg::default()
        };
        let u = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.5, 0.1]);
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.4, -0.1, 0.7]);
        let y1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y2 = y1.add_scalar(-7.5);
        let s1 = aggregate_stats([(&u, &g, &y1)]).unwrap();
        let s2 = aggregate_stats([(&u, &g, &y2)]).unwrap();
        assert_eq!(select_scale(&s1, &cfg, 0.02, 0.3), select_scale(&s2, &cfg, 0.02, 0.7));
    }

    #[test]
    fn config_validation() {
        assert!(PracticalCfg::default().validate().is_ok());
        let bad = PracticalCfg {
            eta_init: 0.05,
            ..PracticalCfg::default()
        };
        assert!(bad.validate().is_err());
        let bad = PracticalCfg {
            grid_points: 1,
            ..PracticalCfg::default()
        };
        assert!(bad.validate().is_err());
    }
}
