use std::f64::consts::PI;

use nsasym::decomp::{dyadic_bump, smooth_step};
use nsasym::fields::{space_fn, weak_lq_norm, xk_norm, SphereRule};
use nsasym::flux::{flux_integral, FluxConfig};
use nsasym::fields::{space_time_fn, Zero};
use nsasym::landau::{a_of_b, b_of_a};
use nsasym::oseen::{oseen_eval, oseen_with_gradient, stokeslet};
use nsasym::{Grid, Landau, Mat3, Vec3};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec3<f64>> {
    (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)
        .prop_filter("away from the origin", |(a, b, c)| a * a + b * b + c * c > 1e-2)
        .prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn direction() -> impl Strategy<Value = Vec3<f64>> {
    point().prop_map(|p| p.normalized().unwrap())
}

fn rel(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    (*a - *b).frobenius() / b.frobenius().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn landau_velocity_is_minus_one_homogeneous(
        a in 1.001f64..50.0, axis in direction(), x in point(), lambda in 0.05f64..20.0
    ) {
        let sol = Landau::from_a(a, axis).unwrap();
        let u = sol.eval_velocity(x).unwrap();
        let v = sol.eval_velocity(x * lambda).unwrap();
        prop_assert!((v * lambda - u).norm() <= 1e-13 * u.norm());
        let p = sol.eval_pressure(x).unwrap();
        let q = sol.eval_pressure(x * lambda).unwrap();
        prop_assert!((q * lambda * lambda - p).abs() <= 1e-12 * p.abs().max(1e-300));
    }

    #[test]
    fn landau_velocity_is_axisymmetric(
        a in 1.001f64..50.0, axis in direction(), x in point(), angle in 0.0f64..6.3
    ) {
        let sol = Landau::from_a(a, axis).unwrap();
        let q = Mat3::rotation(axis, angle);
        let lhs = sol.eval_velocity(q.apply(&x)).unwrap();
        let rhs = q.apply(&sol.eval_velocity(x).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn landau_gradient_is_traceless(a in 1.001f64..50.0, axis in direction(), x in point()) {
        let sol = Landau::from_a(a, axis).unwrap();
        let j = sol.velocity_gradient(x).unwrap();
        prop_assert!(j.trace().abs() <= 1e-12 * j.frobenius());
    }

    #[test]
    fn a_of_b_inverts_b_of_a(l in -6.0f64..8.0) {
        let a = 1.0 + l.exp();
        let back = a_of_b(b_of_a(a).unwrap(), 1e-12).unwrap();
        prop_assert!((back / a - 1.0).abs() < 1e-8);
    }

    #[test]
    fn b_of_a_decreases(l in -6.0f64..8.0, d in 1e-3f64..2.0) {
        let a = 1.0 + l.exp();
        let b = 1.0 + (l + d).exp();
        prop_assert!(b_of_a(b).unwrap() < b_of_a(a).unwrap());
    }

    #[test]
    fn oseen_parabolic_scaling(t in 1e-2f64..10.0, x in point(), lambda in 0.1f64..10.0) {
        let s = oseen_eval(t, &x).unwrap();
        let sl = oseen_eval(lambda * lambda * t, &(x * lambda)).unwrap();
        prop_assert!(rel(&(sl * lambda.powi(3)), &s) < 1e-11);
    }

    #[test]
    fn oseen_symmetric_and_even(t in 1e-2f64..10.0, x in point()) {
        let (s, g) = oseen_with_gradient(t, &x);
        let (sm, gm) = oseen_with_gradient(t, &(x * -1.0));
        prop_assert!(rel(&s.transpose(), &s) < 1e-14);
        prop_assert!(rel(&sm, &s) < 1e-14);
        for l in 0..3 {
            prop_assert!((g[l] + gm[l]).frobenius() <= 1e-13 * g[l].frobenius().max(1e-300));
        }
    }

    #[test]
    fn stokeslet_is_minus_one_homogeneous(x in point(), lambda in 0.05f64..20.0) {
        let e = stokeslet(&x).unwrap();
        let el = stokeslet(&(x * lambda)).unwrap();
        prop_assert!(rel(&(el * lambda), &e) < 1e-14);
    }

    #[test]
    fn sphere_rule_weights_sum_to_four_pi(n in 8usize..64, m in 1usize..96) {
        let r = SphereRule::<f64>::new(n, m).unwrap();
        prop_assert!((r.weight_sum() / (4.0 * PI) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_lq_is_positively_homogeneous(c in -50.0f64..50.0, q in 1.1f64..6.0) {
        let g = Grid::new(0.2, 20.0, 8, 4, 6).unwrap();
        let f = space_fn(|x: Vec3<f64>| (-x.norm()).exp() * (1.0 + x[2]));
        let cf = space_fn(move |x: Vec3<f64>| c * (-x.norm()).exp() * (1.0 + x[2]));
        let a = weak_lq_norm(&f, q, &g).unwrap();
        let b = weak_lq_norm(&cf, q, &g).unwrap();
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn xk_norm_grows_under_nested_refinement(a in 1.01f64..20.0, axis in direction(), k in 0.0f64..2.0) {
        let sol = Landau::from_a(a, axis).unwrap();
        let coarse = Grid::new(0.1, 50.0, 5, 4, 4).unwrap();
        let fine = Grid::new(0.1, 50.0, 9, 4, 12).unwrap();
        prop_assert!(xk_norm(&sol, k, &fine).unwrap() >= xk_norm(&sol, k, &coarse).unwrap());
    }

    #[test]
    fn smooth_step_is_monotone(u in -0.5f64..1.5, d in 0.0f64..0.5) {
        let (s0, ds) = smooth_step(u);
        let (s1, _) = smooth_step(u + d);
        prop_assert!((0.0..=1.0).contains(&s0) && ds >= 0.0 && s1 >= s0);
    }

    #[test]
    fn dyadic_bumps_partition_unity(l in -20.0f64..20.0) {
        let r = l.exp2();
        let sum: f64 = (-30..30).map(|k| dyadic_bump(r * 2f64.powi(-k))).sum();
        prop_assert!((sum - 1.0).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn flux_is_linear_in_the_source(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, rho in 0.5f64..5.0) {
        let cfg = FluxConfig { radii: vec![rho], sphere_theta: 8, sphere_phi: 16, ..FluxConfig::default() };
        let u = Zero::<Vec3<f64>>::new();
        let p = Zero::<f64>::new();
        let f1 = |x: Vec3<f64>| Vec3::new(x[2], 1.0, 0.0).outer(&Vec3::new(0.0, x[0], 1.0));
        let f2 = |x: Vec3<f64>| Mat3::diag(x[1]) + Vec3::unit(2).outer(&x);
        let a = flux_integral(&u, &p, &space_time_fn(move |_t: f64, x| f1(x)), rho, &cfg).unwrap();
        let b = flux_integral(&u, &p, &space_time_fn(move |_t: f64, x| f2(x)), rho, &cfg).unwrap();
        let mix = space_time_fn(move |_t: f64, x| f1(x) * c1 + f2(x) * c2);
        let m = flux_integral(&u, &p, &mix, rho, &cfg).unwrap();
        let expected = a * c1 + b * c2;
        prop_assert!((m - expected).norm() <= 1e-12 * (1.0 + expected.norm()));
    }
}
