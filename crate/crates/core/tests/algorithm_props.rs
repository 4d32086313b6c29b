use muonscale::da::{da_run, DaConfig};
use muonscale::df::{df_run, majorant_eval, radius_search, DfConfig, OmegaRule, RayState, SEARCH_TOL};
use muonscale::muon::OPTIMALITY_IDENTITY;
use muonscale::problems::{build_problem, ProblemOptions};
use muonscale::sc::sc_run;
use muonscale::{make_problem, BlockShape, Error, Geometry, NormTag, Point, ProblemKind, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_point(p: &ProblemSpec, rng: &mut ChaCha8Rng, scale: f64) -> Point {
    let n: usize = p.layout().iter().map(BlockShape::len).sum();
    let flat: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Point::from_flat(p.layout(), &flat).unwrap()
}

fn geometries_for(layout_is_matrix: bool) -> Vec<Geometry> {
    if layout_is_matrix {
        vec![Geometry::spectral(), Geometry::uniform(NormTag::Euclidean, 1)]
    } else {
        vec![Geometry::euclidean(), Geometry::linf()]
    }
}

#[test]
fn sc_runs_keep_their_lemmas_across_problems_and_geometries() {
    for name in ["quad_iso", "least_squares", "logistic", "ripple", "star_1d"] {
        let p = make_problem(name, 4, 1).unwrap();
        let x0 = p.initial_point(2);
        for geom in geometries_for(false) {
            for alpha in [0.2, 0.7] {
                let out = sc_run(&p, &geom, &x0, alpha, 300).unwrap_or_else(|e| panic!("{name}: {e}"));
                let a = out.trace.column("a").unwrap();
                let scales = out.trace.scales();
                let l = p.smoothness(&geom).unwrap();
                assert!(a.iter().zip(&scales).all(|(a, eta)| *a >= 0.0 && *eta == a / l));
            }
        }
    }
}

#[test]
fn sc_spectral_runs_keep_their_lemmas() {
    let layout = vec![BlockShape::matrix("W", 3, 4)];
    let p = build_problem(ProblemKind::LeastSquares, layout, 5, &ProblemOptions::default()).unwrap();
    let out = sc_run(&p, &Geometry::spectral(), &p.initial_point(1), 0.5, 300).unwrap();
    assert!(out.gap_final.unwrap() < out.trace.records[0].gap.unwrap());
}

#[test]
fn da_radius_is_monotone_and_tracking_holds() {
    for name in ["ripple", "quad_iso", "logistic"] {
        let p = make_problem(name, 5, 2).unwrap();
        let x0 = p.initial_point(3);
        for geom in geometries_for(false) {
            let cfg = DaConfig {
                r: 0.2,
                alpha: 0.6,
                eta_max: None,
            };
            let out = da_run(&p, &geom, &x0, &cfg, 400).unwrap();
            let r_bar = out.trace.column("r_bar").unwrap();
            assert!(r_bar.windows(2).all(|w| w[1] >= w[0]) && r_bar[0] >= 0.2);
            let err = out.trace.column("track_err").unwrap();
            let bound = out.trace.column("track_bound").unwrap();
            assert!(err.iter().zip(&bound).all(|(e, b)| *e <= b + 1e-8));
        }
    }
}

#[test]
fn majorant_is_convex_and_majorizes_on_seeded_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = DfConfig::new(0.9, 0.2, 1.0, 1.0, 6.0, OmegaRule::Unit).unwrap();
    let opts = ProblemOptions::default();
    for i in 0..50 {
        let kind = [ProblemKind::LeastSquares, ProblemKind::Logistic, ProblemKind::Star1d][i % 3];
        let matrix = i % 2 == 1;
        let layout = if matrix {
            vec![BlockShape::matrix("W", 2, 3)]
        } else {
            vec![BlockShape::vector("x", 6)]
        };
        let p = build_problem(kind, layout, i as u64, &opts).unwrap();
        for geom in geometries_for(matrix) {
            let l = p.smoothness(&geom).unwrap();
            let x0 = gaussian_point(&p, &mut rng, 2.0);
            let x = gaussian_point(&p, &mut rng, 2.0);
            let m = gaussian_point(&p, &mut rng, 1.0);
            let g = p.grad(&x);
            let f = p.value(&x);
            let d = rng.random_range(0.0..3.0);
            let st = RayState::new(&x0, &x, &m, cfg.beta, &geom).unwrap();
            let r = radius_search(&st, &g, l, &cfg, d, f, &geom, SEARCH_TOL).unwrap();
            let hi = 4.0 * r.max(1.0);
            let q: Vec<f64> = (0..1000)
                .map(|j| majorant_eval(&st, &g, l, &cfg, d, f, hi * j as f64 / 999.0, &geom).unwrap())
                .collect();
            let scale = q.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for w in q.windows(3) {
                assert!(
                    w[0] - 2.0 * w[1] + w[2] >= -1e-9 * scale,
                    "state {i}: second difference"
                );
            }
            for j in 0..10 {
                let rr = hi * j as f64 / 9.0;
                let w = st.offset(rr);
                let wn = geom.primal_norm(&w).unwrap();
                let upper = f + cfg.beta * g.dot(&w) + 0.5 * l * cfg.beta * cfg.beta * wn * wn;
                assert!(
                    p.value(&st.z(rr)) <= upper + 1e-9,
                    "state {i}: majorization at R = {rr}"
                );
            }
        }
    }
}

#[test]
fn negated_lmo_trips_the_identity_in_every_algorithm() {
    let p = make_problem("quad_iso", 3, 0).unwrap();
    let x0 = p.initial_point(0);
    let bad = Geometry::euclidean().with_negated_lmo();
    let runs = [
        da_run(
            &p,
            &bad,
            &x0,
            &DaConfig {
                r: 0.5,
                alpha: 0.5,
                eta_max: None,
            },
            5,
        ),
        sc_run(&p, &bad, &x0, 0.5, 5),
        df_run(&p, &bad, &x0, &DfConfig::for_horizon(0.9, 5).unwrap(), 5, 0.0),
    ];
    for r in runs {
        assert!(
            matches!(
                r,
                Err(Error::Invariant {
                    lemma: OPTIMALITY_IDENTITY,
                    step: 0,
                    ..
                })
            ),
            "{r:?}"
        );
    }
}

#[test]
fn df_runs_are_deterministic() {
    let p = make_problem("logistic", 5, 4).unwrap();
    let x0 = p.initial_point(4);
    let cfg = DfConfig::for_horizon(0.9, 200).unwrap();
    let a = df_run(&p, &Geometry::linf(), &x0, &cfg, 200, 0.0).unwrap();
    let b = df_run(&p, &Geometry::linf(), &x0, &cfg, 200, 0.0).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.x_final, b.x_final);
}
