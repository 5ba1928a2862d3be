use dblfib::cli::io::GridData;
use dblfib::expr::Expr;
use dblfib::geometry::ScalarField;
use dblfib::linalg::{norm, sub};
use dblfib::microlocal::fbi::{classify, fit_decay, DetectorConfig, WfClass};
use dblfib::microlocal::{chi_map, chi_plus, critical_point_solve, fbi_transform, pair_with_packet, WavePacketFamily};
use dblfib::transforms::{forward, radon_fibration, radon_gaussian, TransformKind, TransformSpec};
use proptest::prelude::*;
use std::f64::consts::PI;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn radon_of_shifted_gaussian_is_closed_form(
        cx in -1.0f64..1.0, cy in -1.0f64..1.0, sigma in 0.4f64..1.2,
        alpha in 0.01f64..3.13, s in -2.0f64..2.0,
    ) {
        let spec = TransformSpec::new(radon_fibration(9.0), TransformKind::EuclideanRadon);
        let f = ScalarField::gaussian(&[cx, cy], sigma);
        let v = forward(&spec, &f, &[alpha, s]).unwrap();
        let e = radon_gaussian(&[cx, cy], sigma, alpha, s);
        prop_assert!((v - e).abs() <= 1e-8 * e.max(1e-3), "{} vs {}", v, e);
    }

    #[test]
    fn radon_is_linear(a in -2.0f64..2.0, alpha in 0.1f64..3.0, s in -1.0f64..1.0) {
        let spec = TransformSpec::new(radon_fibration(4.0), TransformKind::EuclideanRadon);
        let mut f = ScalarField::gaussian(&[0.2, 0.1], 0.7);
        let mut g = ScalarField::gaussian(&[-0.3, 0.0], 0.5);
        f.support = vec![(-3.5, 3.5); 2];
        g.support = f.support.clone();
        let (f2, g2) = (f.clone(), g.clone());
        let h = ScalarField::new(f.support.clone(), std::sync::Arc::new(move |x: &[f64]| a * f2.eval(x) + g2.eval(x)));
        let z = [alpha, s];
        let lhs = forward(&spec, &h, &z).unwrap();
        let rhs = a * forward(&spec, &f, &z).unwrap() + forward(&spec, &g, &z).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn chi_inverts_chi_plus(x0 in -0.8f64..0.8, x1 in -0.8f64..0.8, a in 0.2f64..3.0, mu in 0.3f64..2.0, sg in prop::bool::ANY) {
        let fib = radon_fibration(3.0);
        let m = if sg { mu } else { -mu };
        let eta = vec![m * a.cos(), m * a.sin()];
        let x = vec![x0, x1];
        let (z, zeta) = chi_plus(&fib, &x, &eta).unwrap();
        let (xb, eb) = chi_map(&fib, &z, &zeta).unwrap();
        prop_assert!(norm(&sub(&xb, &x)) < 1e-9 && norm(&sub(&eb, &eta)) < 1e-9);
    }

    #[test]
    fn phase_is_real_on_the_fiber_and_coercive_off_it(
        x0 in -0.5f64..0.5, x1 in -0.5f64..0.5, a in 0.3f64..2.8, mu in 0.5f64..1.5, d in 0.02f64..0.1,
    ) {
        let fib = radon_fibration(3.0);
        let th = [a.cos(), a.sin()];
        let b_alpha = -x0 * th[1] + x1 * th[0];
        let v1 = [a, x0 * th[0] + x1 * th[1]];
        let v2 = [-b_alpha * mu, mu];
        let on = critical_point_solve(&fib, &[x0, x1], &v1, &v2).unwrap();
        prop_assert!(on.im_psi.abs() < 1e-12 && on.residual_1 < 1e-9);
        let off = [x0 + d * th[0], x1 + d * th[1]];
        let dd = critical_point_solve(&fib, &off, &v1, &v2).unwrap();
        prop_assert!(dd.im_psi > 0.0, "{:?}", dd);
    }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn csv_round_trips(n in 1usize..5, m in 1usize..5, vals in prop::collection::vec(-1e6f64..1e6, 16)) {
        let g = GridData {
            axes: vec!["a".into(), "b".into()],
            coords: vec![(0..n).map(|i| i as f64 * 0.1).collect(), (0..m).map(|i| -(i as f64) / 3.0).collect()],
            values: vals[..n * m].to_vec(),
        };
        prop_assert_eq!(GridData::parse(&g.to_csv(), "mem").unwrap(), g);
    }

    #[test]
    fn expressions_match_direct_evaluation(a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.1f64..3.0) {
        let e = Expr::parse("x1 * x2 - exp(-x3) / (1 + x1^2) + sqrt(x3)", &["x1", "x2", "x3"]).unwrap();
        let want = a * b - (-c).exp() / (1.0 + a * a) + c.sqrt();
        prop_assert!((e.eval(&[a, b, c]) - want).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn decay_fit_recovers_exact_models(c in -3.0f64..3.0, p in -1.5f64..1.5, eps in 0.0f64..0.3) {
        let ls: Vec<f64> = (3..=10).map(|k| 2f64.powi(k)).collect();
        let vals: Vec<f64> = ls.iter().map(|l| (c + p * l.ln() - eps * l).exp()).collect();
        let (e, pw, r) = fit_decay(&ls, &vals);
        prop_assert!((e - eps).abs() < 1e-9 && (pw - p).abs() < 1e-7 && r < 1e-9);
    }

    #[test]
    fn classification_is_monotone_in_the_rate(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, r in 0.0f64..0.4) {
        let cfg = DetectorConfig::default();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let rank = |c: WfClass| match c { WfClass::Singular => 0, WfClass::Inconclusive => 1, WfClass::Regular => 2 };
        prop_assert!(rank(classify(lo, r, &cfg)) <= rank(classify(hi, r, &cfg)));
    }
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn packet_self_pairing_is_its_mass(u in -1.0f64..1.0, w in -2.0f64..2.0, k in 3i32..8) {
        let l = 2f64.powi(k);
        let fam = WavePacketFamily::new(2);
        let (u1, u2) = ([u, -0.5 * u], [w, 1.0 - w]);
        let g = |y: &[f64]| fam.packet(&u1, &u2, l, y);
        let p = pair_with_packet(&g, &[(-4.0, 4.0); 2], &[], &u1, &u2, l);
        prop_assert!((p.value - fam.mass(l)).norm() / fam.mass(l) < 1e-10);
    }

    #[test]
    fn fbi_commutes_with_translation(dx in -0.5f64..0.5, dy in -0.5f64..0.5, a in 0.0f64..(2.0 * PI)) {
        let l = 16.0;
        let u2 = [a.cos(), a.sin()];
        let f = ScalarField::bump(&[0.0, 0.0], 0.5);
        let g = ScalarField::bump(&[dx, dy], 0.5);
        let base = fbi_transform(&f, &[0.1, 0.2], &u2, l);
        let moved = fbi_transform(&g, &[0.1 + dx, 0.2 + dy], &u2, l);
        // Translation multiplies by the plane-wave phase exp(-i lambda u2 . d).
        let ph = dblfib::linalg::C64::from_polar(1.0, -l * (u2[0] * dx + u2[1] * dy));
        prop_assert!((moved - base * ph).norm() < 1e-8 * (1e-12 + base.norm()).max(1e-6));
    }
}
