use hsr_core::io;
use hsr_core::model::{self, AbundanceMatrix, SpatialResponse, SpectralResponse, Window};
use hsr_core::scenegen::{self, add_noise};
use hsr_core::solver::{self, InitMode, SolverConfig};
use hsr_core::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn simplex_columns(n: usize, l: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, l, 0.01, 1.0).prop_map(|mut m| {
        for mut c in m.column_iter_mut() {
            let t = c.sum();
            c /= t;
        }
        m
    })
}

/// Windows of random size and weights over `l` pixels; the last window
/// sweeps up any pixel the others missed.
fn windows(l: usize) -> impl Strategy<Value = SpatialResponse> {
    prop::collection::vec(
        (prop::collection::btree_set(0..l, 1..=l.min(4)), 0.1f64..1.0),
        1..5,
    )
    .prop_map(move |ws| {
        let mut covered = vec![false; l];
        let mut out: Vec<Window> = ws
            .into_iter()
            .map(|(set, w0)| {
                let pixels: Vec<usize> = set.into_iter().collect();
                pixels.iter().for_each(|&p| covered[p] = true);
                let raw: Vec<f64> = (0..pixels.len()).map(|k| w0 + k as f64).collect();
                let z: f64 = raw.iter().sum();
                Window {
                    pixels,
                    weights: raw.iter().map(|x| x / z).collect(),
                }
            })
            .collect();
        let rest: Vec<usize> = (0..l).filter(|&p| !covered[p]).collect();
        if !rest.is_empty() {
            let w = 1.0 / rest.len() as f64;
            out.push(Window {
                weights: vec![w; rest.len()],
                pixels: rest,
            });
        }
        SpatialResponse::new(l, out).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decimation_commutes_with_mixing(
        a in matrix(5, 3, 0.0, 1.0),
        s in simplex_columns(3, 6),
        f in matrix(2, 5, 0.0, 1.0),
        g in windows(6),
    ) {
        let fx = &f * (&a * &s);
        prop_assert!((fx - (&f * &a) * &s).norm() < 1e-12);
        let xg = g.apply(&(&a * &s));
        let ag = &a * g.apply(&s);
        prop_assert!((xg - ag).norm() < 1e-12);
        prop_assert!((g.apply(&s) - &s * g.to_dense()).norm() < 1e-12);
    }

    #[test]
    fn decimated_abundances_stay_in_simplex_and_nest_supports(
        s in simplex_columns(4, 6).prop_map(|mut m| { m[(0, 0)] = 0.0; m[(1, 3)] = 0.0; m }),
        g in windows(6),
    ) {
        let mut s = s;
        for mut c in s.column_iter_mut() {
            let t = c.sum();
            c /= t;
        }
        let s = AbundanceMatrix::new(s).unwrap();
        let sp = model::decimate_abundances(&s, &g).unwrap();
        for (i, w) in g.windows().iter().enumerate() {
            let sup_i = model::support(sp.matrix().column(i).iter().copied(), 1e-12);
            for &j in &w.pixels {
                let sup_j = model::support(s.matrix().column(j).iter().copied(), 1e-12);
                prop_assert!(sup_j.iter().all(|k| sup_i.contains(k)));
            }
        }
    }

    #[test]
    fn simplex_projection_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..10)) {
        let p = solver::project_simplex(&v).unwrap();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = solver::project_simplex(&p).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(m in matrix(3, 4, -1e6, 1e6)) {
        let back = io::parse_matrix(&io::format_matrix(&m)).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn noise_snr_is_exact(y in matrix(4, 5, -1.0, 1.0), snr in -10.0f64..60.0, seed in any::<u64>()) {
        prop_assume!(y.norm() > 1e-6);
        let noisy = add_noise(&y, snr, seed).unwrap();
        let realized = 10.0 * (y.norm_squared() / (&noisy - &y).norm_squared()).log10();
        prop_assert!((realized - snr).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_iterates_are_feasible_and_monotone(
        ym in matrix(2, 6, 0.0, 1.0),
        yh in matrix(5, 2, 0.0, 1.0),
        f in matrix(2, 5, 0.05, 1.0),
        seed in any::<u64>(),
    ) {
        let f = SpectralResponse::new(f).unwrap();
        let g = SpatialResponse::new(6, vec![
            Window { pixels: vec![0, 1, 2, 3], weights: vec![0.25; 4] },
            Window { pixels: vec![3, 4, 5], weights: vec![0.2, 0.5, 0.3] },
        ]).unwrap();
        let cfg = SolverConfig { init: InitMode::Random, seed, max_outer_iterations: 100, ..SolverConfig::default() };
        let sol = solver::solve_cosmf(&ym, &yh, &f, &g, 3, &cfg).unwrap();
        prop_assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(sol.a.matrix().iter().all(|&x| (0.0..=1.0).contains(&x)));
        // AbundanceMatrix construction already enforced the simplex
        prop_assert_eq!(sol.s.pixels(), 6);
        let again = solver::solve_cosmf(&ym, &yh, &f, &g, 3, &cfg).unwrap();
        prop_assert_eq!(again, sol);
    }

    #[test]
    fn generated_scenes_pass_the_assumptions(seed in any::<u64>()) {
        let cfg = scenegen::SceneConfig { seed, ..scenegen::SceneConfig::desk() };
        let (f, g) = cfg.operators().unwrap();
        let gen = scenegen::generate_scene(&cfg, &f, &g).unwrap();
        let rep = hsr_core::bounds::check_assumptions(
            &gen.scene.endmembers, &gen.scene.abundances, &f, &g, Default::default(),
        ).unwrap();
        prop_assert!(rep.all_pass(), "{:?}", rep);
        let sp = model::decimate_abundances(&gen.scene.abundances, &g).unwrap();
        for (t, &w) in gen.sidecar.pure_windows.iter().enumerate() {
            let col = sp.matrix().column(w);
            let pure = (0..cfg.endmembers).all(|k| col[k] == f64::from(u8::from(k == t)));
            prop_assert!(pure, "window {} is not pure", w);
        }
    }
}
