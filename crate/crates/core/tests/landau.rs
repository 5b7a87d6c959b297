use std::f64::consts::PI;

use nsasym::fields::{fd_gradient, laplacian, xk_norm, Field};
use nsasym::landau::*;
use nsasym::quadrature::GaussLegendre;
use nsasym::{Error, Grid, Landau, Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|b|(A)` from the printed closed form, without the series branch.
fn b_closed(a: f64) -> f64 {
    16.0 * PI * (a + 0.5 * a * a * ((a - 1.0) / (a + 1.0)).ln() + 4.0 * a / (3.0 * (a - 1.0) * (a + 1.0)))
}

/// `Delta U - (U . grad) U`, which equals `grad p` for a Landau pair.
fn pressure_force(sol: &Landau, x: Vec3<f64>) -> Vec3<f64> {
    let u = sol.eval_velocity(x).unwrap();
    let j = sol.velocity_gradient(x).unwrap();
    let lap = laplacian(sol, 0.0, x, 1e-5 * x.norm()).unwrap();
    let conv = j.row(0) * u[0] + j.row(1) * u[1] + j.row(2) * u[2];
    lap - conv
}

fn line_integral(sol: &Landau, path: &[Vec3<f64>]) -> f64 {
    let gl = GaussLegendre::<f64>::new(24);
    let mut acc = 0.0;
    for seg in path.windows(2) {
        let d = seg[1] - seg[0];
        for (&s, &w) in gl.nodes.iter().zip(&gl.weights) {
            let y = seg[0] + d * (0.5 * (s + 1.0));
            acc += 0.5 * w * pressure_force(sol, y).dot(&d);
        }
    }
    acc
}

#[test]
fn b_of_a_examples() {
    let b2 = b_of_a(2.0f64).unwrap();
    assert!((b2 - b_closed(2.0)).abs() < 1e-6);
    assert!((b2 - 34.766_840_318_785_725).abs() < 1e-6);
    let b1000 = b_of_a(1000.0f64).unwrap();
    assert!((b1000 / (16.0 * PI / 1000.0) - 1.0).abs() < 1e-2);
    assert!(b_of_a(1.5f64).unwrap() > b2 && b2 > b_of_a(3.0f64).unwrap());
    assert!(matches!(b_of_a(1.0f64), Err(Error::Domain(_))));
    assert!(matches!(b_of_a(0.5f64), Err(Error::Domain(_))));
}

#[test]
fn b_of_a_matches_closed_form_below_cancellation() {
    for a in [1.0001f64, 1.01, 1.5, 2.0, 3.0, 7.0, 20.0] {
        let b = b_of_a(a).unwrap();
        // the closed form loses about log10(A^4) digits to cancellation
        assert!((b / b_closed(a) - 1.0).abs() < 1e-15 * a.powi(4) * 10.0, "A={a}: {}", b / b_closed(a) - 1.0);
    }
}

#[test]
fn b_of_a_strictly_decreasing() {
    let vals: Vec<f64> = (0..50)
        .map(|i| {
            let l = (1.001f64).ln() + ((1e4f64).ln() - (1.001f64).ln()) * i as f64 / 49.0;
            b_of_a(l.exp()).unwrap()
        })
        .collect();
    assert!(vals.windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn a_of_b_roundtrip() {
    let a = a_of_b(b_of_a(2.0f64).unwrap(), 1e-12).unwrap();
    assert!((a - 2.0).abs() < 1e-10);
    assert!(a_of_b(0.0f64, 1e-12).unwrap().is_infinite());
    let edge = a_of_b(b_of_a(1.0001f64).unwrap(), 1e-12).unwrap();
    assert!((edge - 1.0001).abs() < 1e-8);
    for a in [1.01f64, 1.1, 2.0, 5.0, 10.0, 100.0] {
        let back = a_of_b(b_of_a(a).unwrap(), 1e-12).unwrap();
        assert!((back / a - 1.0).abs() < 1e-8, "A={a}");
    }
    assert!(matches!(a_of_b(1.0f64, 0.0), Err(Error::Domain(_))));
    assert!(matches!(a_of_b(-1.0f64, 1e-12), Err(Error::Domain(_))));
}

#[test]
fn velocity_examples() {
    let zero = Landau::zero();
    for x in [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.1, 0.0, 1e-3)] {
        assert_eq!(zero.eval_velocity(x).unwrap().to_f64(), [0.0; 3]);
    }
    let x = Vec3::new(1.0, 2.0, 3.0);
    for a in [1.01, 2.0, 17.0] {
        let sol = Landau::from_a(a, Vec3::new(0.3, -0.2, 0.9)).unwrap();
        let u1 = sol.eval_velocity(x).unwrap();
        let u2 = sol.eval_velocity(x * 2.0).unwrap();
        assert!((u2 * 2.0 - u1).norm() <= 1e-14 * u1.norm());
    }
    assert!(matches!(
        Landau::from_a(2.0, Vec3::unit(2)).unwrap().eval_velocity(Vec3::zero()),
        Err(Error::Singularity(_))
    ));
}

#[test]
fn velocity_is_axisymmetric() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let q = Mat3::rotation(Vec3::unit(2), PI / 2.0);
    for x in [Vec3::new(1.0, 0.5, -0.3), Vec3::new(-2.0, 0.1, 4.0)] {
        let a = sol.eval_velocity(q.apply(&x)).unwrap();
        let b = q.apply(&sol.eval_velocity(x).unwrap());
        assert!((a - b).norm() < 1e-14 * b.norm().max(1.0));
    }
}

#[test]
fn velocity_is_divergence_free() {
    let sol = Landau::from_a(2.0, Vec3::new(1.0, -1.0, 0.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let r = 0.5 * 100f64.powf(rng.gen::<f64>());
        let d = Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let x = d.normalized().unwrap() * r;
        let g = fd_gradient(&sol, 0.0, x, 1e-4 * r).unwrap();
        let div = g[0][0] + g[1][1] + g[2][2];
        assert!(div.abs() < 1e-5 / (r * r), "div {div} at r={r}");
    }
}

#[test]
fn pressure_gradient_consistency() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let x = Vec3::new(1.0, 0.5, -0.3);
    let gp = Vec3(fd_gradient(&sol.pressure(), 0.0, x, 1e-4).unwrap());
    let f = pressure_force(&sol, x);
    assert!((gp - f).norm() < 1e-5 * f.norm());
}

#[test]
fn pressure_homogeneity_and_decay() {
    let sol = Landau::from_a(1.3, Vec3::new(0.0, 1.0, 1.0)).unwrap();
    for x in [Vec3::new(1.0, 0.5, -0.3), Vec3::new(0.0, 3.0, 3.0)] {
        let p1 = sol.eval_pressure(x).unwrap();
        let p2 = sol.eval_pressure(x * 2.0).unwrap();
        assert!((p2 * 4.0 - p1).abs() < 1e-12 * p1.abs());
    }
    assert!(sol.eval_pressure(Vec3::new(1e6, 0.0, 0.0)).unwrap().abs() < 1e-10);
    assert!(sol.pressure().eval(0.0, Vec3::zero()).is_nan());
}

#[test]
fn pressure_exists_by_path_independence() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let x0 = Vec3::new(5.0, 0.0, 0.0);
    let x = Vec3::new(1.0, 0.5, -0.3);
    let p1 = [x0, Vec3::new(5.0, 0.5, 0.0), Vec3::new(5.0, 0.5, -0.3), x];
    let p2 = [x0, Vec3::new(2.0, -2.0, 3.0), Vec3::new(1.0, 0.5, 2.0), x];
    let i1 = line_integral(&sol, &p1);
    let i2 = line_integral(&sol, &p2);
    assert!((i1 - i2).abs() < 1e-8, "{i1} vs {i2}");
    let dp = sol.eval_pressure(x).unwrap() - sol.eval_pressure(x0).unwrap();
    assert!((i1 - dp).abs() < 1e-8 * dp.abs().max(1.0));
}

#[test]
fn residual_examples() {
    let sol = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let grid = Grid::new(0.5, 50.0, 32, 16, 32).unwrap();
    let (mom, div) = landau_residual(&sol, &grid, Step::Default).unwrap();
    assert!(mom < 1e-4 && div < 1e-4, "{mom} {div}");
    let (m0, d0) = landau_residual(&Landau::zero(), &grid, Step::Default).unwrap();
    assert_eq!((m0, d0), (0.0, 0.0));
}

#[test]
fn residual_is_second_order_in_the_step() {
    let sol = Landau::from_a(2.0, Vec3::new(0.2, 0.3, 1.0)).unwrap();
    let grid = Grid::new(0.5, 50.0, 6, 6, 8).unwrap();
    let (m1, _) = landau_residual(&sol, &grid, Step::Relative(2e-2)).unwrap();
    let (m2, _) = landau_residual(&sol, &grid, Step::Relative(1e-2)).unwrap();
    let ratio = m1 / m2;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn x1_norm_shrinks_with_force() {
    let grid = Grid::new(0.1, 100.0, 16, 16, 8).unwrap();
    let norms: Vec<f64> = [1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&b| xk_norm(&Landau::from_b(Vec3::new(0.0, 0.0, b)).unwrap(), 1.0, &grid).unwrap())
        .collect();
    assert!(norms.iter().all(|v| v.is_finite()));
    assert!(norms[0] < norms[1] && norms[1] < norms[2]);
    // |U| ~ |b| / (8 pi |x|) for small |b|
    assert!(norms[0] < 1e-3);
}

#[test]
fn solution_fields_are_consistent() {
    let sol = Landau::from_b(Vec3::new(0.0, 3.0, 4.0)).unwrap();
    assert!((b_of_a(sol.a).unwrap() - 5.0).abs() < 1e-10 * 5.0);
    assert!((sol.axis - Vec3::new(0.0, 0.6, 0.8)).norm() < 1e-15);
    assert!(Landau::from_a(2.0, Vec3::zero()).is_err());
    assert!(Landau::zero().is_zero());
}
