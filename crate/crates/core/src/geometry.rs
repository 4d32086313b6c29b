//! Norm pairs, dual norms and linear-minimization-oracle directions.
//!
//! Each block of a [`Point`] carries a [`NormTag`]. The product space uses the
//! max-over-blocks primal norm, so the dual norm is the sum of block dual norms
//! and the LMO factorizes blockwise (one orthogonalization per matrix block).
//!
//! | tag         | primal        | dual          | ascent direction `u(m)` |
//! |-------------|---------------|---------------|-------------------------|
//! | `Euclidean` | Frobenius     | Frobenius     | `m / ‖m‖_F`             |
//! | `LinfSign`  | max entry     | sum of entries| `sign(m)`, `sign(0)=0`  |
//! | `Spectral`  | largest σ     | sum of σ      | `U Vᵀ`                  |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::point::{BlockShape, Point};

/// Relative cutoff below which singular values are treated as zero.
pub const SINGULAR_CUTOFF: f64 = 1e-12;

/// Quintic Newton-Schulz coefficients `(a, b, c)`.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);
pub const NS_DEFAULT_ITERS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormTag {
    Euclidean,
    LinfSign,
    Spectral,
}

impl NormTag {
    pub fn name(self) -> &'static str {
        match self {
            NormTag::Euclidean => "euclidean",
            NormTag::LinfSign => "linf",
            NormTag::Spectral => "spectral",
        }
    }

    pub fn primal(self, a: &DMatrix<f64>) -> f64 {
        match self {
            NormTag::Euclidean => with_safe_scale(a, |b| b.norm()),
            NormTag::LinfSign => a.amax(),
            NormTag::Spectral => with_safe_scale(a, |b| singular_values(b).first().copied().unwrap_or(0.0)),
        }
    }

    pub fn dual(self, a: &DMatrix<f64>) -> f64 {
        match self {
            NormTag::Euclidean => with_safe_scale(a, |b| b.norm()),
            NormTag::LinfSign => a.iter().map(|v| v.abs()).sum(),
            NormTag::Spectral => with_safe_scale(a, |b| singular_values(b).iter().sum()),
        }
    }

    /// Maximizer of `⟨m, u⟩` over the primal unit ball of this block.
    pub fn lmo_ascent(self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            NormTag::Euclidean => {
                let m = rescaled(m);
                let n = m.norm();
                if n > 0.0 {
                    m.as_ref() / n
                } else {
                    DMatrix::zeros(m.nrows(), m.ncols())
                }
            }
            NormTag::LinfSign => m.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            NormTag::Spectral => polar_factor(&rescaled(m)),
        }
    }

    /// `sup ‖v‖_* / ‖v‖_F · sup ‖v‖_F / ‖v‖` for a block of the given shape.
    ///
    /// Multiplying a Frobenius-geometry smoothness constant by the summed
    /// factors of all blocks yields a valid smoothness constant in the product
    /// geometry.
    pub fn frobenius_factor(self, rows: usize, cols: usize) -> f64 {
        match self {
            NormTag::Euclidean => 1.0,
            NormTag::LinfSign => (rows * cols) as f64,
            NormTag::Spectral => rows.min(cols) as f64,
        }
    }
}

impl fmt::Display for NormTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(NormTag::Euclidean),
            "linf" | "linf_sign" | "sign" => Ok(NormTag::LinfSign),
            "spectral" => Ok(NormTag::Spectral),
            other => Err(Error::config(format!("unknown geometry '{other}'"))),
        }
    }
}

/// Per-block norm tags composed with the max-over-blocks product rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    tags: Vec<NormTag>,
    negated: bool,
}

impl Geometry {
    pub fn new(tags: Vec<NormTag>) -> Self {
        Self { tags, negated: false }
    }

    pub fn uniform(tag: NormTag, blocks: usize) -> Self {
        Self::new(vec![tag; blocks])
    }

    /// Fault injection: an LMO that returns `-u(m)`. Every trust-region step
    /// taken with this geometry must fail its optimality-identity assertion.
    pub fn with_negated_lmo(mut self) -> Self {
        self.negated = true;
        self
    }

    pub fn euclidean() -> Self {
        Self::uniform(NormTag::Euclidean, 1)
    }

    pub fn linf() -> Self {
        Self::uniform(NormTag::LinfSign, 1)
    }

    pub fn spectral() -> Self {
        Self::uniform(NormTag::Spectral, 1)
    }

    pub fn tags(&self) -> &[NormTag] {
        &self.tags
    }

    /// True when the product norm comes from an inner product, so squared
    /// norms of affine maps are exact quadratics. A max over several
    /// Euclidean blocks is not.
    pub fn is_inner_product(&self) -> bool {
        self.tags.len() == 1 && self.tags[0] == NormTag::Euclidean
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if p.blocks().len() != self.tags.len() {
            return Err(Error::config(format!(
                "geometry has {} blocks but point {} has {}",
                self.tags.len(),
                p,
                p.blocks().len()
            )));
        }
        Ok(())
    }

    pub fn check_layout(&self, layout: &[BlockShape]) -> Result<()> {
        if layout.len() != self.tags.len() {
            return Err(Error::config(format!(
                "geometry has {} blocks but layout has {}",
                self.tags.len(),
                layout.len()
            )));
        }
        Ok(())
    }

    /// Product primal norm: max over blocks.
    pub fn primal_norm(&self, x: &Point) -> Result<f64> {
        self.check(x)?;
        Ok(self
            .tags
            .iter()
            .zip(x.blocks())
            .map(|(t, b)| t.primal(&b.data))
            .fold(0.0, f64::max))
    }

    /// Product dual norm: sum over blocks.
    pub fn dual_norm(&self, m: &Point) -> Result<f64> {
        self.check(m)?;
        Ok(self.tags.iter().zip(m.blocks()).map(|(t, b)| t.dual(&b.data)).sum())
    }

    /// `u(m) ∈ argmax_{‖u‖≤1} ⟨m, u⟩`; the zero point for `m = 0`.
    pub fn lmo_ascent(&self, m: &Point) -> Result<Point> {
        self.check(m)?;
        let mut out = m.clone();
        for (t, b) in self.tags.iter().zip(out.blocks_mut()) {
            b.data = t.lmo_ascent(&b.data);
            if self.negated {
                b.data.neg_mut();
            }
        }
        Ok(out)
    }

    /// `s(m) = -u(m) ∈ argmin_{‖s‖≤1} ⟨m, s⟩`.
    pub fn lmo_descent(&self, m: &Point) -> Result<Point> {
        Ok(-&self.lmo_ascent(m)?)
    }

    /// Factor converting a Frobenius smoothness constant into one valid for
    /// this geometry on points of the given layout.
    pub fn smoothness_factor(&self, layout: &[BlockShape]) -> Result<f64> {
        self.check_layout(layout)?;
        Ok(self
            .tags
            .iter()
            .zip(layout)
            .map(|(t, s)| t.frobenius_factor(s.rows, s.cols))
            .sum())
    }
}

/// Largest entries outside this range are rescaled before squaring or an
/// SVD, so norms neither underflow nor overflow.
const SAFE_MAGNITUDE: (f64, f64) = (1e-100, 1e100);

/// Binary exponent bringing `amax` into `[1, 2)`, or `None` when no
/// rescaling is needed.
pub(crate) fn safe_exponent(amax: f64) -> Option<i32> {
    (amax > 0.0 && amax.is_finite() && !(SAFE_MAGNITUDE.0..=SAFE_MAGNITUDE.1).contains(&amax))
        .then(|| amax.log2().floor() as i32)
}

/// `x · 2^k`, split in two factors so neither power overflows.
pub(crate) fn ldexp(x: f64, k: i32) -> f64 {
    x * 2f64.powi(k / 2) * 2f64.powi(k - k / 2)
}

fn rescaled(a: &DMatrix<f64>) -> std::borrow::Cow<'_, DMatrix<f64>> {
    match safe_exponent(a.amax()) {
        Some(k) => std::borrow::Cow::Owned(a.map(|v| ldexp(v, -k))),
        None => std::borrow::Cow::Borrowed(a),
    }
}

/// Evaluates a positively homogeneous `norm` on an exactly rescaled copy.
fn with_safe_scale(a: &DMatrix<f64>, norm: impl Fn(&DMatrix<f64>) -> f64) -> f64 {
    match safe_exponent(a.amax()) {
        Some(k) => ldexp(norm(&a.map(|v| ldexp(v, -k))), k),
        None => norm(a),
    }
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Polar factor `U Vᵀ` of a reduced SVD, dropping directions whose singular
/// value is below `SINGULAR_CUTOFF · σ_max`.
fn polar_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if a.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(r, c);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested U");
    let v_t = svd.v_t.expect("svd requested V^T");
    let s_max = svd.singular_values.max();
    let mut out = DMatrix::zeros(r, c);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > SINGULAR_CUTOFF * s_max {
            out += u.column(i) * v_t.row(i);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Orthogonalization {
    /// `U Vᵀ` from the SVD.
    #[default]
    Exact,
    /// Quintic odd-polynomial iteration on the Frobenius-normalized input.
    NewtonSchulz { iters: usize },
}

pub fn orthogonalize(a: &DMatrix<f64>, mode: Orthogonalization) -> Result<DMatrix<f64>> {
    match mode {
        Orthogonalization::Exact => Ok(polar_factor(a)),
        Orthogonalization::NewtonSchulz { iters } => newton_schulz(a, iters),
    }
}

fn newton_schulz(a: &DMatrix<f64>, iters: usize) -> Result<DMatrix<f64>> {
    let fro = a.norm();
    if fro == 0.0 || !fro.is_finite() {
        return Err(Error::Degenerate("Newton-Schulz needs a nonzero finite matrix".into()));
    }
    let (ca, cb, cc) = NS_COEFFS;
    let tall = a.nrows() > a.ncols();
    let mut x = if tall { a.transpose() } else { a.clone() } / fro;
    for _ in 0..iters {
        let gram = &x * x.transpose();
        let poly = &gram * cb + &gram * &gram * cc;
        x = &x * ca + poly * &x;
    }
    Ok(if tall { x.transpose() } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn norms_and_lmos_survive_extreme_magnitudes() {
        for scale in [1e-300, 1e-310, 1e300] {
            let m = Point::from_vec(&[3.0 * scale, 4.0 * scale]);
            let e = Geometry::euclidean();
            assert_relative_eq!(e.dual_norm(&m).unwrap(), 5.0 * scale, max_relative = 1e-12);
            let u = e.lmo_ascent(&m).unwrap().to_flat();
            assert_relative_eq!(u[0], 0.6, epsilon = 1e-12);
            assert_relative_eq!(u[1], 0.8, epsilon = 1e-12);
            let w = Point::from_matrix_rows(2, 2, &[2.0 * scale, 0.0, 0.0, scale]);
            let sp = Geometry::spectral();
            assert_relative_eq!(sp.dual_norm(&w).unwrap(), 3.0 * scale, max_relative = 1e-12);
            assert_relative_eq!(sp.primal_norm(&w).unwrap(), 2.0 * scale, max_relative = 1e-12);
            assert_relative_eq!(
                sp.primal_norm(&sp.lmo_ascent(&w).unwrap()).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact() {
        assert_eq!(ldexp(3.0, 1060), 3.0 * 2f64.powi(530) * 2f64.powi(530));
        assert_eq!(ldexp(ldexp(1.5e-310, 1040), -1040), 1.5e-310);
        assert_eq!(safe_exponent(1.0), None);
        assert_eq!(safe_exponent(0.0), None);
        assert_eq!(safe_exponent(1e-300), Some(-997));
    }

    #[test]
    fn dual_norm_examples() {
        let e = Geometry::euclidean();
        assert_relative_eq!(e.dual_norm(&Point::from_vec(&[3.0, 4.0])).unwrap(), 5.0);
        let s = Geometry::linf();
        assert_relative_eq!(s.dual_norm(&Point::from_vec(&[2.0, -1.0, 0.0])).unwrap(), 3.0);
        let sp = Geometry::spectral();
        let m = Point::from_matrix_rows(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        assert_relative_eq!(sp.dual_norm(&m).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn lmo_examples() {
        let u = Geometry::euclidean().lmo_ascent(&Point::from_vec(&[3.0, 4.0])).unwrap();
        assert_relative_eq!(u.to_flat()[0], 0.6);
        assert_relative_eq!(u.to_flat()[1], 0.8);

        let u = Geometry::linf()
            .lmo_ascent(&Point::from_vec(&[2.0, -1.0, 0.0]))
            .unwrap();
        assert_eq!(u.to_flat(), vec![1.0, -1.0, 0.0]);

        let m = Point::from_matrix_rows(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        let u = Geometry::spectral().lmo_ascent(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!((&u.blocks()[0].data - want).amax() < 1e-12);
    }

    #[test]
    fn zero_momentum_gives_zero_direction() {
        for g in [Geometry::euclidean(), Geometry::linf()] {
            let u = g.lmo_ascent(&Point::from_vec(&[0.0, 0.0])).unwrap();
            assert_eq!(u.to_flat(), vec![0.0, 0.0]);
        }
        let z = Point::from_matrix_rows(2, 3, &[0.0; 6]);
        assert!(Geometry::spectral()
            .lmo_ascent(&z)
            .unwrap()
            .to_flat()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn orthogonalize_exact_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let o = orthogonalize(&id, Orthogonalization::Exact).unwrap();
        assert!((o - &id).amax() < 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        let o = orthogonalize(&d, Orthogonalization::Exact).unwrap();
        assert!((o - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_polar_factor_has_unit_and_zero_singular_values() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 0.0]);
        let o = orthogonalize(&a, Orthogonalization::Exact).unwrap();
        let sv = singular_values(&o);
        assert!((sv[0] - 1.0).abs() < 1e-8 && (sv[1] - 1.0).abs() < 1e-8);
        assert!(sv[2].abs() < 1e-8);
    }

    #[test]
    fn newton_schulz_rejects_zero() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            orthogonalize(&z, Orthogonalization::NewtonSchulz { iters: 5 }),
            Err(Error::Degenerate(_))
        ));
        assert_eq!(orthogonalize(&z, Orthogonalization::Exact).unwrap(), z);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let g = Geometry::new(vec![NormTag::Euclidean, NormTag::Spectral]);
        assert!(matches!(g.dual_norm(&Point::from_vec(&[1.0])), Err(Error::Config(_))));
    }

    #[test]
    fn product_norms_compose_max_and_sum() {
        let layout = vec![BlockShape::vector("a", 2), BlockShape::matrix("W", 2, 2)];
        let p = Point::from_flat(&layout, &[3.0, 4.0, 2.0, 0.0, 0.0, -1.0]).unwrap();
        let g = Geometry::new(vec![NormTag::Euclidean, NormTag::Spectral]);
        assert_relative_eq!(g.primal_norm(&p).unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(g.dual_norm(&p).unwrap(), 8.0, epsilon = 1e-12);
        assert_relative_eq!(g.smoothness_factor(&layout).unwrap(), 3.0);
    }
}
