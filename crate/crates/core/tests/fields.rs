use std::f64::consts::PI;

use nsasym::fields::*;
use nsasym::{Error, Grid, Landau, Vec3};

/// `xk_norm(U^b, 1)` for `A = 2`, axis `e_3`, on the 64 x 32 x 64 default grid.
const LANDAU_X1_BASELINE: f64 = 4.3670435213422145e1;

#[test]
fn grid_shape_and_descriptor() {
    let g = Grid::default_grid();
    assert_eq!(g.radii.len(), 64);
    assert!(g.radii.windows(2).all(|p| p[1] > p[0]));
    assert!((g.radii[0] - 0.1).abs() < 1e-15 && (g.radii[63] - 100.0).abs() < 1e-12);
    let text = g.descriptor().to_text();
    for key in ["r_min", "r_max", "n_r = 64", "n_theta = 32", "n_phi = 64"] {
        assert!(text.contains(key), "{text}");
    }
    assert!(Grid::new(0.0, 1.0, 4, 2, 2).is_err());
    assert!(Grid::new(1.0, 0.5, 4, 2, 2).is_err());
    assert!(Grid::new(0.1, 1.0, 1, 2, 2).is_err());
}

#[test]
fn sphere_rule_weights() {
    for n in [8, 9, 12, 16, 24, 32, 48] {
        for m in [1, 7, 16, 64] {
            let r = SphereRule::<f64>::new(n, m).unwrap();
            assert!((r.weight_sum() / (4.0 * PI) - 1.0).abs() < 1e-12);
        }
    }
    assert!(SphereRule::<f64>::new(0, 4).is_err());
}

#[test]
fn cell_volumes_fill_the_shell() {
    let g = Grid::new(0.5, 8.0, 12, 6, 8).unwrap();
    let total: f64 = g.nodes().iter().map(|(_, v)| v).sum();
    let exact = 4.0 * PI / 3.0 * (8.0f64.powi(3) - 0.5f64.powi(3));
    assert!((total / exact - 1.0).abs() < 1e-12);
}

#[test]
fn xk_examples() {
    let g = Grid::new(0.1, 100.0, 20, 8, 16).unwrap();
    let f = space_fn(|x: Vec3<f64>| Vec3::new(1.0 / (1.0 + x.norm()), 0.0, 0.0));
    let v = xk_norm(&f, 1.0, &g).unwrap();
    assert!((v - 1.0).abs() < 1e-14);
    assert_eq!(xk_norm(&Zero::<Vec3<f64>>::new(), 1.0, &g).unwrap(), 0.0);
}

#[test]
fn xk_landau_baseline_and_refinement() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let v = xk_norm(&sol, 1.0, &Grid::new(0.1, 100.0, 64, 32, 64).unwrap()).unwrap();
    let fine = xk_norm(&sol, 1.0, &Grid::new(0.1, 100.0, 128, 64, 128).unwrap()).unwrap();
    println!("xk_norm(U, 1) = {v:.16e}, refined {fine:.16e}");
    assert!(v.is_finite() && v > 0.0);
    assert!((fine - v).abs() / v < 1e-2);
    assert!((v - LANDAU_X1_BASELINE).abs() < 1e-10 * v);
}

#[test]
fn xk_monotone_under_refinement() {
    let sol = Landau::from_a(1.5, Vec3::new(0.2, 0.1, 1.0)).unwrap();
    let coarse = Grid::new(0.1, 100.0, 9, 4, 8).unwrap();
    // doubling n_r - 1 and tripling n_phi nests the coarse radii and azimuths
    let fine = Grid::new(0.1, 100.0, 17, 4, 24).unwrap();
    let a = xk_norm(&sol, 1.0, &coarse).unwrap();
    let b = xk_norm(&sol, 1.0, &fine).unwrap();
    assert!(b >= a);
}

#[test]
fn xk_reports_bad_node() {
    let g = Grid::new(0.1, 1.0, 4, 2, 2).unwrap();
    let f = space_fn(|x: Vec3<f64>| if x.norm() > 0.5 { f64::INFINITY } else { 0.0 });
    match xk_norm(&f, 1.0, &g) {
        Err(Error::NonFinite { node }) => assert!(node.contains("x=")),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert!(weak_lq_norm(&f, 2.0, &g).is_err());
}

#[test]
fn weak_lq_power_law() {
    let g = Grid::new(1e-3, 1e3, 96, 4, 4).unwrap();
    for q in [1.5, 2.0, 3.0] {
        let f = space_fn(move |x: Vec3<f64>| x.norm().powf(-3.0 / q));
        let v = weak_lq_norm(&f, q, &g).unwrap();
        // |{|x|^{-3/q} > l}| = (4 pi / 3) l^{-q} for every l
        let exact = (4.0 * PI / 3.0).powf(1.0 / q);
        assert!((v / exact - 1.0).abs() < 0.2, "q={q}: {v} vs {exact}");
    }
}

#[test]
fn weak_lq_homogeneity_and_zero() {
    let g = Grid::new(0.1, 10.0, 16, 6, 8).unwrap();
    let f = space_fn(|x: Vec3<f64>| Vec3::new(x[0], -x[2], 1.0) * (1.0 / (1.0 + x.norm2())));
    let g75 = space_fn(|x: Vec3<f64>| Vec3::new(x[0], -x[2], 1.0) * (7.5 / (1.0 + x.norm2())));
    let a = weak_lq_norm(&f, 2.5, &g).unwrap();
    let b = weak_lq_norm(&g75, 2.5, &g).unwrap();
    assert!((b - 7.5 * a).abs() < 1e-12 * b);
    assert_eq!(weak_lq_norm(&Zero::<f64>::new(), 2.0, &g).unwrap(), 0.0);
    assert!(matches!(weak_lq_norm(&f, 1.0, &g), Err(Error::Domain(_))));
}

#[test]
fn norm_report_is_finite() {
    let g = Grid::new(0.5, 20.0, 8, 4, 8).unwrap();
    let sol = Landau::from_a(3.0, Vec3::unit(0)).unwrap();
    let r = norm_report(&sol, 1.0, 3.0, &g).unwrap();
    assert!(r.xk_value.is_finite() && r.xk_value > 0.0);
    assert!(r.weak_lq_value.is_finite() && r.weak_lq_value > 0.0);
    assert_eq!(r.grid_used, g.descriptor());
}

#[test]
fn fd_examples() {
    let sq = space_fn(|x: Vec3<f64>| x[0] * x[0]);
    for x in [Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, -1.0, 7.0)] {
        match fd_derivative(&sq, DerivOrder::Laplacian, 0.0, x, 1e-3).unwrap() {
            Derivative::Laplacian(v) => assert!((v - 2.0).abs() < 1e-6),
            _ => unreachable!(),
        }
    }
    let swirl = space_fn(|x: Vec3<f64>| Vec3::new(-x[1], x[0], 0.0) * (1.0 / x.norm2()));
    match fd_derivative(&swirl, DerivOrder::Div, 0.0, Vec3::new(1.0, 1.0, 1.0), 1e-4).unwrap() {
        Derivative::Div(d) => assert!(d.abs() < 1e-6),
        _ => unreachable!(),
    }
    assert!(fd_gradient(&sq, 0.0, Vec3::zero(), 0.0).is_err());
}

#[test]
fn fd_matches_analytic_landau_gradient() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let x = Vec3::new(2.0, 0.0, 0.0);
    assert!(sol.has_analytic_gradient());
    let analytic = gradient(&sol, 0.0, x, 1e-4).unwrap();
    let fd = fd_gradient(&sol, 0.0, x, default_step(&x)).unwrap();
    let scale: f64 = analytic.iter().map(|r| r.norm2()).sum::<f64>().sqrt();
    for i in 0..3 {
        assert!((analytic[i] - fd[i]).norm() < 1e-6 * scale);
    }
}

#[test]
fn fd_second_order_convergence() {
    // polynomial times Gaussian
    let f = space_fn(|x: Vec3<f64>| (1.0 + x[0] * x[1] - x[2] * x[2] * x[2]) * (-x.norm2()).exp());
    let dfdx = |x: Vec3<f64>| {
        let e = (-x.norm2()).exp();
        let p = 1.0 + x[0] * x[1] - x[2] * x[2] * x[2];
        (x[1] - 2.0 * x[0] * p) * e
    };
    let lap = |x: Vec3<f64>| {
        // Delta(p e) = (Delta p) e + 2 grad p . grad e + p Delta e
        let e = (-x.norm2()).exp();
        let p = 1.0 + x[0] * x[1] - x[2] * x[2] * x[2];
        let dp = Vec3::new(x[1], x[0], -3.0 * x[2] * x[2]);
        let lp = -6.0 * x[2];
        let ge = x * (-2.0 * e);
        let le = (4.0 * x.norm2() - 6.0) * e;
        lp * e + 2.0 * dp.dot(&ge) + p * le
    };
    let x = Vec3::new(0.3, -0.5, 0.4);
    for h in [1e-2, 2e-2] {
        let g1 = fd_gradient(&f, 0.0, x, h).unwrap()[0];
        let g2 = fd_gradient(&f, 0.0, x, h / 2.0).unwrap()[0];
        let ratio = (g1 - dfdx(x)).abs() / (g2 - dfdx(x)).abs();
        assert!((3.5..=4.5).contains(&ratio), "grad ratio {ratio}");
        let l1 = fd_laplacian(&f, 0.0, x, h).unwrap();
        let l2 = fd_laplacian(&f, 0.0, x, h / 2.0).unwrap();
        let ratio = (l1 - lap(x)).abs() / (l2 - lap(x)).abs();
        assert!((3.5..=4.5).contains(&ratio), "laplacian ratio {ratio}");
    }
}

#[test]
fn sphere_integral_examples() {
    let rule = SphereRule::<f64>::new(32, 64).unwrap();
    let one = space_fn(|_x: Vec3<f64>| 1.0);
    for rho in [0.5, 2.0, 10.0] {
        let v = sphere_integral(&one, 0.0, Vec3::zero(), rho, &rule).unwrap();
        assert!((v / (4.0 * PI * rho * rho) - 1.0).abs() < 1e-12);
    }
    let odd = space_fn(|x: Vec3<f64>| x[2] / x.norm());
    assert!(sphere_integral(&odd, 0.0, Vec3::zero(), 1.3, &rule).unwrap().abs() < 1e-12);
    let sq = space_fn(|x: Vec3<f64>| (x[2] / x.norm()).powi(2));
    let v = sphere_integral(&sq, 0.0, Vec3::zero(), 2.0, &rule).unwrap();
    assert!((v / (16.0 * PI / 3.0) - 1.0).abs() < 1e-12);
    let nan = space_fn(|_x: Vec3<f64>| f64::NAN);
    assert!(sphere_integral(&nan, 0.0, Vec3::zero(), 1.0, &rule).is_err());
    assert!(sphere_integral(&one, 0.0, Vec3::zero(), 0.0, &rule).is_err());
}

#[test]
fn evaluation_is_pure() {
    let sol = Landau::from_a(1.3, Vec3::new(1.0, 2.0, -0.5)).unwrap();
    let g = Grid::new(0.2, 30.0, 10, 6, 8).unwrap();
    let a = xk_norm(&sol, 1.0, &g).unwrap();
    let b = xk_norm(&sol, 1.0, &g).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let h: FieldHandle<f64, Vec3<f64>> = std::sync::Arc::new(sol);
    assert_eq!(h.arity(), Arity::Vector3);
    let x = Vec3::new(0.3, 0.1, 2.0);
    assert_eq!(h.eval(0.0, x).to_f64(), sol.eval(0.0, x).to_f64());
}
