mod common;

use common::{
    complex_step_gradient, corpus, first_sign, lex_ge, random_smooth, ternary_vectors, CORPUS, KINK_POINTS,
};
use lserc_core::ld::{
    extract_l_derivative, fsign, ld_max, ld_mid, ld_min, slmax, taylor_approx, taylor_residual_profile,
    DirectionsMatrix, LdFunction, LdScalar, DEFAULT_ZERO_TOL,
};
use lserc_core::model::{Expr, ExprFunction};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn fsign_matches_linear_scan_exhaustively() {
    for n in 1..=5 {
        for v in ternary_vectors(n) {
            assert_eq!(fsign(&v, DEFAULT_ZERO_TOL).unwrap(), first_sign(&v), "{v:?}");
        }
    }
}

#[test]
fn slmax_matches_lexicographic_comparator_exhaustively() {
    for k in 1..=4 {
        let rows = ternary_vectors(k + 1);
        for a in &rows {
            for b in &rows {
                let want = if lex_ge(a, b) { &a[1..] } else { &b[1..] };
                assert_eq!(slmax(a, b, DEFAULT_ZERO_TOL).unwrap(), want, "{a:?} {b:?}");
            }
        }
    }
}

#[test]
fn min_and_mid_values_match_real_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let mut s = || {
            let v = (rng.gen_range(-2i32..=2)) as f64;
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(-1i32..=1) as f64).collect();
            LdScalar::new(v, d)
        };
        let (x, y, z) = (s(), s(), s());
        let m = ld_min(&x, &y, DEFAULT_ZERO_TOL).unwrap();
        assert_eq!(m.value(), x.value().min(y.value()));
        let neg = |a: &LdScalar| LdScalar::new(-a.value(), a.deriv().iter().map(|v| -v).collect());
        let via_max = neg(&ld_max(&neg(&x), &neg(&y), DEFAULT_ZERO_TOL).unwrap());
        assert_eq!(m, via_max);
        let mid = ld_mid(&x, &y, &z, DEFAULT_ZERO_TOL).unwrap();
        let mut vals = [x.value(), y.value(), z.value()];
        vals.sort_by(f64::total_cmp);
        assert_eq!(mid.value(), vals[1]);
    }
}

fn directions_matrix(n: usize, k: usize, v: &[f64]) -> DirectionsMatrix {
    DirectionsMatrix::new(DMatrix::from_row_slice(n, k, &v[..n * k])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_homogeneity(
        idx in 0usize..CORPUS.len(),
        x0 in prop::array::uniform2(-2.0f64..2.0),
        m in prop::collection::vec(-1.0f64..1.0, 6),
        c in 0.01f64..10.0,
    ) {
        let f = ExprFunction::parse(&[CORPUS[idx]], 2).unwrap();
        let base = directions_matrix(2, 3, &m);
        let scaled = DirectionsMatrix::new(base.as_matrix() * c).unwrap();
        let (_, a) = f.ld_derivative(&x0, &base).unwrap();
        let (_, b) = f.ld_derivative(&x0, &scaled).unwrap();
        let tol = 1e-12 * (1.0 + c) * (1.0 + a.amax());
        prop_assert!((a * c - b).amax() <= tol);
    }

    #[test]
    fn homogeneity_at_kinks(
        idx in 0usize..CORPUS.len(),
        p in 0usize..KINK_POINTS.len(),
        m in prop::collection::vec(-1.0f64..1.0, 6),
        c in 0.01f64..10.0,
    ) {
        let f = ExprFunction::parse(&[CORPUS[idx]], 2).unwrap();
        let base = directions_matrix(2, 3, &m);
        let scaled = DirectionsMatrix::new(base.as_matrix() * c).unwrap();
        let x0 = KINK_POINTS[p];
        let (_, a) = f.ld_derivative(&x0, &base).unwrap();
        let (_, b) = f.ld_derivative(&x0, &scaled).unwrap();
        let tol = 1e-12 * (1.0 + c) * (1.0 + a.amax());
        prop_assert!((a * c - b).amax() <= tol);
    }

    #[test]
    fn smooth_compositions_recover_jacobian_times_m(
        seed in any::<u64>(),
        x0 in prop::array::uniform2(-1.5f64..1.5),
        m in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = random_smooth(&mut rng, 3);
        let e = Expr::parse(&src).unwrap();
        let f = ExprFunction::new(vec![e.clone()], 2).unwrap();
        let dm = directions_matrix(2, 3, &m);
        let (_, ld) = f.ld_derivative(&x0, &dm).unwrap();
        let g = complex_step_gradient(&e, &x0);
        let want = DMatrix::from_row_slice(1, 2, &g) * dm.as_matrix();
        prop_assert!((ld - &want).amax() <= 1e-10 * (1.0 + want.amax()), "{src}");
    }

    #[test]
    fn directional_derivative_identity(
        idx in 0usize..CORPUS.len(),
        x0 in prop::array::uniform2(-2.0f64..2.0),
        d in prop::array::uniform2(-1.0f64..1.0),
    ) {
        prop_assume!(d[0].abs() + d[1].abs() > 1e-3);
        let f = ExprFunction::parse(&[CORPUS[idx]], 2).unwrap();
        let m = DirectionsMatrix::with_primary(&d).unwrap();
        let (fx, ld) = f.ld_derivative(&x0, &m).unwrap();
        let jl = extract_l_derivative(&ld, &m).unwrap();
        let dir = jl.entries()[(0, 0)] * d[0] + jl.entries()[(0, 1)] * d[1];
        let a = 1e-7;
        let moved = [x0[0] + a * d[0], x0[1] + a * d[1]];
        let fd = (f.eval(&moved).unwrap()[0] - fx[0]) / a;
        prop_assert!((fd - dir).abs() <= 1e-5 * dir.abs().max(1.0), "{}: {fd} vs {dir}", CORPUS[idx]);
    }
}

#[test]
fn chain_rule_composition_is_bit_identical() {
    let outer = [
        "(max {0} (abs {1}))",
        "(mid {0} {1} (* {0} {1}))",
        "(exp (min {0} (neg {1})))",
    ];
    let inner = ["(* x0 x1)", "(- x0 (sin x1))"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in outer {
        let whole = g.replace("{0}", inner[0]).replace("{1}", inner[1]);
        let one_pass = ExprFunction::parse(&[&whole], 2).unwrap();
        let f = ExprFunction::parse(&inner, 2).unwrap();
        let g_fn = ExprFunction::parse(&[&g.replace("{0}", "x0").replace("{1}", "x1")], 2).unwrap();
        for _ in 0..50 {
            let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = DirectionsMatrix::with_primary(&d).unwrap();
            let seeds = lserc_core::LdVector::seed(&x0, &m).unwrap().scalars();
            let direct = one_pass.eval_ld(&seeds).unwrap();
            let staged = g_fn.eval_ld(&f.eval_ld(&seeds).unwrap()).unwrap();
            assert_eq!(direct, staged, "{whole}");
        }
    }
}

#[test]
fn taylor_residual_decays_for_the_kinked_quadratic() {
    let f = ExprFunction::parse(&["(abs (- (* x0 x0) (* x1 x1)))"], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scales = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    for _ in 0..50 {
        let d = common::random_unit(&mut rng, 2);
        let r = taylor_residual_profile(&f, &[1.0, 1.0], &d, &scales).unwrap();
        for w in r.windows(2) {
            assert!(w[1] <= 0.6 * w[0] || w[0] <= 1e-12, "{d:?}: {r:?}");
        }
    }
    let h = 0.25;
    assert_eq!(taylor_approx(&f, &[1.0, 1.0], &[h, 0.0]).unwrap(), vec![2.0 * h]);
}

#[test]
fn taylor_approx_is_exact_for_piecewise_linear_functions() {
    let f = ExprFunction::parse(&["(+ (abs x0) (max x1 (neg x0)))"], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let d = common::random_unit(&mut rng, 2);
        let r = taylor_residual_profile(&f, &[0.0, 0.0], &d, &[1.0, 0.1, 0.01]).unwrap();
        assert!(r.iter().all(|v| *v <= 1e-14), "{r:?}");
    }
}

#[test]
fn corpus_evaluates_everywhere_used() {
    for (f, src) in corpus().iter().zip(CORPUS) {
        for p in KINK_POINTS {
            assert!(f.eval(&p).is_ok(), "{src} at {p:?}");
        }
    }
}
