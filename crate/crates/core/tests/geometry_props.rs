use muonscale::geometry::{orthogonalize, singular_values, Orthogonalization, NS_DEFAULT_ITERS};
use muonscale::{BlockShape, Geometry, NormTag, Point};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn setups() -> Vec<(Vec<BlockShape>, Geometry)> {
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

const MAX_LEN: usize = 14;

fn point(layout: &[BlockShape], raw: &[f64]) -> Point {
    let n: usize = layout.iter().map(BlockShape::len).sum();
    Point::from_flat(layout, &raw[..n]).unwrap()
}

fn entries() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, MAX_LEN)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn dual_norm_is_a_norm(a in entries(), b in entries(), lambda in -5.0..5.0f64) {
        for (layout, geom) in setups() {
            let (x, y) = (point(&layout, &a), point(&layout, &b));
            let nx = geom.dual_norm(&x).unwrap();
            prop_assert!(nx >= 0.0);
            let scaled = geom.dual_norm(&x.scale(lambda)).unwrap();
            prop_assert!((scaled - lambda.abs() * nx).abs() <= 1e-10 * (1.0 + lambda.abs() * nx));
            let sum = geom.dual_norm(&(&x + &y)).unwrap();
            prop_assert!(sum <= nx + geom.dual_norm(&y).unwrap() + 1e-10 * (1.0 + sum));
            let p = geom.primal_norm(&(&x + &y)).unwrap();
            prop_assert!(p <= geom.primal_norm(&x).unwrap() + geom.primal_norm(&y).unwrap() + 1e-10 * (1.0 + p));
        }
    }

    #[test]
    fn holder_inequality(a in entries(), b in entries()) {
        for (layout, geom) in setups() {
            let (g, x) = (point(&layout, &a), point(&layout, &b));
            let bound = geom.dual_norm(&g).unwrap() * geom.primal_norm(&x).unwrap();
            prop_assert!(g.dot(&x).abs() <= bound + 1e-10 * (1.0 + bound));
        }
    }

    #[test]
    fn lmo_attains_dual_norm(a in entries()) {
        for (layout, geom) in setups() {
            let m = point(&layout, &a);
            let u = geom.lmo_ascent(&m).unwrap();
            let d = geom.dual_norm(&m).unwrap();
            prop_assert!((m.dot(&u) - d).abs() <= 1e-8 * d.max(f64::MIN_POSITIVE));
            prop_assert!(geom.primal_norm(&u).unwrap() <= 1.0 + 1e-10);
            let s = geom.lmo_descent(&m).unwrap();
            prop_assert!((m.dot(&s) + d).abs() <= 1e-8 * d.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn exact_polar_factor_is_partial_isometry(a in prop::collection::vec(-3.0..3.0f64, 12), rank_cut in 0usize..3) {
        let mut m = DMatrix::from_column_slice(3, 4, &a);
        // Optionally force rank deficiency.
        for r in 0..rank_cut {
            let row = m.row(0).clone_owned();
            m.set_row(r + 1, &(row * (r as f64 + 2.0)));
        }
        let q = orthogonalize(&m, Orthogonalization::Exact).unwrap();
        for s in singular_values(&q) {
            prop_assert!(s.abs() <= 1e-8 || (s - 1.0).abs() <= 1e-8, "singular value {}", s);
        }
    }
}

#[test]
fn newton_schulz_pairs_close_to_nuclear_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g = DMatrix::from_fn(3, 2, |_, _| StandardNormal.sample(&mut rng));
    let nuclear: f64 = singular_values(&g).iter().sum();
    let m = orthogonalize(
        &g,
        Orthogonalization::NewtonSchulz {
            iters: NS_DEFAULT_ITERS,
        },
    )
    .unwrap();
    let rel = (g.dot(&m) - nuclear).abs() / nuclear;
    assert!(rel <= 5e-2, "relative pairing error {rel}");
}

#[test]
fn lmo_pairing_on_500_seeded_momenta_per_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (layout, geom) in setups() {
        let n: usize = layout.iter().map(BlockShape::len).sum();
        for _ in 0..500 {
            let scale = 10f64.powf(rng.random_range(-6.0..6.0));
            let flat: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            let m = Point::from_flat(&layout, &flat).unwrap();
            let d = geom.dual_norm(&m).unwrap();
            let u = geom.lmo_ascent(&m).unwrap();
            assert!((m.dot(&u) - d).abs() <= 1e-8 * d, "{geom:?}: {} vs {d}", m.dot(&u));
        }
    }
}
