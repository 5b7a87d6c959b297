use std::f64::consts::PI;
use std::sync::Arc;

use nsasym::fields::space_time_fn;
use nsasym::potentials::*;
use nsasym::quadrature::{refine, GaussLegendre};
use nsasym::{Error, FieldHandle, Mat3, Vec3};

/// Smooth radial bump supported in |y| <= 1, max 1.
fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Moments int bump(|y|) |y|^k dy for k = 0, 2.
fn bump_moments() -> (f64, f64) {
    let gl = GaussLegendre::<f64>::new(20);
    let br = refine(&[0.0, 1.0], 0.05);
    let m0 = gl.composite(&br, |r| 4.0 * PI * r * r * bump(r));
    let m2 = gl.composite(&br, |r| 4.0 * PI * r.powi(4) * bump(r));
    (m0, m2)
}

/// Stokes velocity of the force density bump(|y|) e_a outside the support.
fn stokes_oracle(x: &Vec3<f64>, a: usize) -> Vec3<f64> {
    let (m0, m2) = bump_moments();
    let r = x.norm();
    let n = *x * (1.0 / r);
    let mut u = Vec3::zero();
    for i in 0..3 {
        let d = if i == a { 1.0 } else { 0.0 };
        u[i] = (m0 * (d + n[i] * n[a]) / r - m2 / 3.0 * (3.0 * n[i] * n[a] - d) / r.powi(3)) / (8.0 * PI);
    }
    u
}

fn vec_source(f: impl Fn(f64, Vec3<f64>) -> Vec3<f64> + Send + Sync + 'static) -> FieldHandle<f64, Vec3<f64>> {
    Arc::new(space_time_fn(f))
}

fn mat_source(f: impl Fn(f64, Vec3<f64>) -> Mat3<f64> + Send + Sync + 'static) -> FieldHandle<f64, Mat3<f64>> {
    Arc::new(space_time_fn(f))
}

fn steady_bump(a: usize) -> Source<f64, Vec3<f64>> {
    Source::new(
        vec_source(move |_, y| Vec3::unit(a) * bump(y.norm())),
        TimeProfile::Steady,
        Envelope::new(1.0, 0.0),
    )
    .with_support(1.0)
}

fn spec() -> PotentialQuadratureSpec {
    PotentialQuadratureSpec::default()
}

#[test]
fn zero_sources_give_zero() {
    let g = Source::new(vec_source(|_, _| Vec3::zero()), TimeProfile::Steady, Envelope::new(0.0, 4.0));
    let v = lambda_apply(&g, 1.0, &Vec3::new(1.0, 2.0, 0.5), &spec()).unwrap();
    assert_eq!(v.value, Vec3::zero());
    let gm = Source::new(mat_source(|_, _| Mat3::zero()), TimeProfile::Steady, Envelope::new(0.0, 3.0));
    let v = theta_apply(&gm, 1.0, &Vec3::new(1.0, 2.0, 0.5), &spec()).unwrap();
    assert_eq!(v.value, Vec3::zero());
}

#[test]
fn steady_lambda_matches_stokes_oracle() {
    let g = steady_bump(2);
    for x in [Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, -1.5, 2.0), Vec3::new(0.0, 0.0, 30.0)] {
        let v = lambda_apply(&g, 1.0, &x, &spec()).unwrap();
        let o = stokes_oracle(&x, 2);
        let e = (v.value - o).norm() / o.norm();
        assert!(e < 1e-8, "x={x:?} rel={e:e}");
    }
}

#[test]
fn steady_lambda_inside_support() {
    // inside the support compare with a much finer rule
    let g = steady_bump(0);
    let x = Vec3::new(0.3, 0.1, -0.2);
    let a = lambda_apply(&g, 1.0, &x, &spec()).unwrap();
    let b = lambda_apply(&g, 1.0, &x, &spec().scaled(2.0)).unwrap();
    assert!((a.value - b.value).norm() < 1e-6 * b.value.norm());
    assert!((a.value - b.value).norm() <= 10.0 * a.error_estimate);
}

#[test]
fn steady_theta_matches_derivative_of_oracle() {
    // G_jk = bump e_a (x) e_b  =>  Theta G = -d_b (Lambda of bump e_a)
    let (a, b) = (2usize, 0usize);
    let g = Source::new(
        mat_source(move |_, y| Vec3::unit(a).outer(&Vec3::unit(b)) * bump(y.norm())),
        TimeProfile::Steady,
        Envelope::new(1.0, 0.0),
    )
    .with_support(1.0);
    let x = Vec3::new(1.5, 0.7, -1.1);
    let v = theta_apply(&g, 1.0, &x, &spec()).unwrap();
    let h = 1e-5;
    let e = Vec3::unit(b) * h;
    let o = (stokes_oracle(&(x + e), a) - stokes_oracle(&(x - e), a)) * (-0.5 / h);
    assert!((v.value - o).norm() < 1e-7 * o.norm(), "{:?} {:?}", v.value, o);
}

#[test]
fn isotropic_tensor_has_zero_theta() {
    let g = Source::new(
        mat_source(|_, y| Mat3::identity() * (1.0 + y.norm2()).powf(-1.25) * (1.0 / 3f64.sqrt())),
        TimeProfile::Steady,
        Envelope::new(1.0, 2.5),
    );
    let x = Vec3::new(2.0, -1.0, 0.5);
    let v = theta_apply(&g, 1.0, &x, &spec()).unwrap();
    let scale = theta_apply(
        &Source::new(
            mat_source(|_, y| Vec3::unit(0).outer(&Vec3::unit(2)) * (1.0 + y.norm2()).powf(-1.25)),
            TimeProfile::Steady,
            Envelope::new(1.0, 2.5),
        ),
        1.0,
        &x,
        &spec(),
    )
    .unwrap();
    assert!(v.value.norm() < 1e-6 * scale.value.norm(), "{:?}", v.value);
}

fn theta_decay_source(shift: Vec3<f64>) -> Source<f64, Mat3<f64>> {
    let m = (Vec3::unit(0).outer(&Vec3::unit(2)) + Vec3::unit(2).outer(&Vec3::unit(0))) * (1.0 / 2f64.sqrt());
    Source::new(
        mat_source(move |_, y| m * (1.0 + (y - shift).norm2()).powf(-1.25)),
        TimeProfile::Steady,
        Envelope::new(1.0, 2.5).centered(shift.to_f64()),
    )
}

#[test]
fn theta_decay_reproduction() {
    let g = theta_decay_source(Vec3::zero());
    let alpha = 1.5;
    let dir = Vec3::new(1.0, 2.0, 2.0) * (1.0 / 3.0);
    let mut w = Vec::new();
    for k in 0..10 {
        let r = 0.5 * 100f64.powf(k as f64 / 9.0);
        let v = theta_apply(&g, 1.0, &(dir * r), &spec()).unwrap();
        assert!(v.error_estimate < 1e-3 * v.value.norm(), "r={r} {v:?}");
        w.push(v.value.norm() * (1.0 + r * r).powf(alpha / 2.0));
    }
    let c = w.iter().cloned().fold(0.0, f64::max);
    assert!(c.is_finite() && c > 0.0);
    // bounded tail: no growth over the last decade
    assert!(w[9] < 1.5 * w[7], "{w:?}");
}

#[test]
fn theta_translation_equivariance() {
    let v = Vec3::new(0.3, -0.2, 0.5);
    let g0 = theta_decay_source(Vec3::zero());
    let g1 = theta_decay_source(v);
    for x in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-2.0, 3.0, 1.0), Vec3::new(0.1, 0.2, -0.3)] {
        let a = theta_apply(&g0, 1.0, &x, &spec()).unwrap().value;
        let b = theta_apply(&g1, 1.0, &(x + v), &spec()).unwrap().value;
        assert!((a - b).norm() < 1e-4 * a.norm().max(1e-12));
    }
}

#[test]
fn theta_is_linear() {
    let m1 = Vec3::unit(0).outer(&Vec3::unit(1));
    let m2 = Vec3::unit(2).outer(&Vec3::unit(2));
    let env = Envelope::new(5.0, 3.0);
    let f1 = move |y: Vec3<f64>| m1 * (1.0 + y.norm2()).powf(-1.5);
    let f2 = move |y: Vec3<f64>| m2 * (1.0 + (y - Vec3::new(0.5, 0.0, 0.0)).norm2()).powf(-2.0);
    let g1 = Source::new(mat_source(move |_, y| f1(y)), TimeProfile::Steady, Envelope::new(1.0, 3.0));
    let g2 = Source::new(
        mat_source(move |_, y| f2(y)),
        TimeProfile::Steady,
        Envelope::new(1.0, 4.0).centered([0.5, 0.0, 0.0]),
    );
    let g3 = Source::new(mat_source(move |_, y| f1(y) + f2(y) * 2.0), TimeProfile::Steady, env);
    for x in [Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, -2.0, 4.0), Vec3::new(7.0, 0.5, 0.5)] {
        let a = theta_apply(&g1, 1.0, &x, &spec()).unwrap().value;
        let b = theta_apply(&g2, 1.0, &x, &spec()).unwrap().value;
        let c = theta_apply(&g3, 1.0, &x, &spec()).unwrap().value;
        assert!((c - (a + b * 2.0)).norm() < 1e-4 * c.norm());
    }
}

#[test]
fn doubling_orders_stays_within_estimate() {
    let g = theta_decay_source(Vec3::zero());
    for x in [Vec3::new(0.7, 0.0, 0.2), Vec3::new(5.0, 5.0, -1.0)] {
        let a = theta_apply(&g, 1.0, &x, &spec()).unwrap();
        let b = theta_apply(&g, 1.0, &x, &spec().scaled(2.0)).unwrap();
        assert!((a.value - b.value).norm() < 10.0 * a.error_estimate, "{a:?} {b:?}");
    }
}

#[test]
fn envelope_violation_is_contract_error() {
    let g = Source::new(
        mat_source(|_, y| Mat3::identity() * (1.0 + y.norm2()).powf(-1.0)),
        TimeProfile::Steady,
        Envelope::new(1.0, 3.0),
    );
    let r = theta_apply(&g, 1.0, &Vec3::new(1.0, 0.0, 0.0), &spec());
    assert!(matches!(r, Err(Error::Contract(_))), "{r:?}");
    let weak = Source::new(mat_source(|_, _| Mat3::zero()), TimeProfile::Steady, Envelope::new(1.0, 1.0));
    assert!(matches!(theta_apply(&weak, 1.0, &Vec3::new(1.0, 0.0, 0.0), &spec()), Err(Error::Domain(_))));
    let mut bad = spec();
    bad.radial_order = 3;
    assert!(theta_apply(&theta_decay_source(Vec3::zero()), 1.0, &Vec3::new(1.0, 0.0, 0.0), &bad).is_err());
}

fn periodic_bump(mean: f64) -> Source<f64, Vec3<f64>> {
    Source::new(
        vec_source(move |t, y| Vec3::unit(2) * ((mean + (2.0 * PI * t).sin()) * bump(y.norm()) / (1.0 + mean))),
        TimeProfile::Periodic { period: 1.0 },
        Envelope::new(1.0, 0.0),
    )
    .with_support(1.0)
}

#[test]
fn periodic_mode_path_matches_time_domain() {
    // zero-mean periodic source: compare the Fourier path with direct time quadrature
    let g = periodic_bump(0.0);
    let x = Vec3::new(1.5, 0.5, 1.0);
    let t = 0.3;
    let a = lambda_apply(&g, t, &x, &spec()).unwrap();
    let mut gen = g.clone();
    gen.profile = TimeProfile::General { horizon: Some(100.0) };
    let mut sp = spec();
    sp.radial_order = 6;
    sp.angular_order = 6;
    sp.azimuth_points = 12;
    sp.time_order = 6;
    sp.min_time_fraction = 1e-12;
    sp.max_time_step = Some(0.25);
    let b = lambda_apply(&gen, t, &x, &sp).unwrap();
    let e = (a.value - b.value).norm() / a.value.norm();
    assert!(e < 2e-3, "{:?} {:?} rel={e:e}", a.value, b.value);
}

#[test]
fn steady_and_general_paths_agree_within_estimate() {
    let g = steady_bump(1);
    let x = Vec3::new(0.0, 2.0, 1.0);
    let a = lambda_apply(&g, 1.0, &x, &spec()).unwrap();
    let mut gen = g.clone();
    gen.profile = TimeProfile::General { horizon: None };
    let b = lambda_apply(&gen, 1.0, &x, &spec()).unwrap();
    let diff = (a.value - b.value).norm();
    assert!(diff <= b.error_estimate, "diff={diff:e} est={:e}", b.error_estimate);
}

#[test]
fn periodic_mean_zero_gives_faster_decay() {
    let radii: Vec<f64> = (0..6).map(|k| 2.0 * 25f64.powf(k as f64 / 5.0)).collect();
    let dir = Vec3::new(0.6, 0.0, 0.8);
    let weighted = |g: &Source<f64, Vec3<f64>>, pw: i32| -> Vec<f64> {
        radii
            .iter()
            .map(|&r| {
                let v = lambda_apply(g, 0.25, &(dir * r), &spec()).unwrap();
                v.value.norm() * r.powi(pw)
            })
            .collect()
    };
    let zero_mean = weighted(&periodic_bump(0.0), 2);
    let with_mean = weighted(&periodic_bump(1.0), 2);
    let x1 = weighted(&steady_bump(2), 1);
    assert!(zero_mean.iter().all(|v| v.is_finite()));
    assert!(zero_mean[5] <= 1.5 * zero_mean[3], "{zero_mean:?}");
    assert!(with_mean[5] > 3.0 * with_mean[0], "{with_mean:?}");
    assert!(x1[5] < 1.5 * x1[3], "{x1:?}");
}

#[test]
fn int_est_exact_cases() {
    // b = c = 0: 4 pi int r^2 (r+1)^-4 dr = 4 pi / 3
    let p = IntEstParams::new(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
    for r in [0.01, 1.0, 30.0] {
        let j = int_est_integral(&p, r, 12);
        assert!((j - 4.0 * PI / 3.0).abs() < 1e-9, "{j}");
    }
    // c = 1: Newtonian potential of (|y|+1)^-4
    let p = IntEstParams::new(0.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let gl = GaussLegendre::<f64>::new(20);
    for r in [0.05f64, 2.0, 40.0] {
        let inner = gl.composite(&refine(&[0.0, r], r / 8.0), |a| a * a * (a + 1.0).powi(-4)) / r;
        let outer_br: Vec<f64> = std::iter::once(r).chain((0..60).map(|k| r * 1.5f64.powi(k + 1))).collect();
        let outer = gl.composite(&outer_br, |a| a * (a + 1.0).powi(-4)) + (r * 1.5f64.powi(60)).powi(-2) / 2.0;
        let expect = 4.0 * PI * (inner + outer);
        let j = int_est_integral(&p, r, 12);
        assert!((j - expect).abs() < 1e-8 * expect, "{r} {j} {expect}");
    }
}

#[test]
fn int_est_scaling_reduction() {
    for (b, c) in [(1.0, 0.0), (2.0, 0.0), (0.0, 1.25)] {
        let p4 = IntEstParams::new(b, c, 1.0, 2.0, 4.0).unwrap();
        let p1 = IntEstParams::new(b, c, 1.0, 1.0, 1.0).unwrap();
        for r in [0.3, 3.0, 30.0] {
            let x = Vec3::new(r, 0.0, 0.0);
            let (a, _) = int_est_ratio(&p4, &[x]).unwrap();
            let (bb, _) = int_est_ratio(&p1, &[x * 0.5]).unwrap();
            assert!((a - bb).abs() < 1e-6 * bb, "{a} {bb}");
        }
    }
}

#[test]
fn int_est_two_sided_bounds() {
    let eta = 0.25;
    let xs: Vec<Vec3<f64>> = (0..30)
        .map(|k| Vec3::new(0.0, 0.0, 0.01 * 1e4f64.powf(k as f64 / 29.0)))
        .collect();
    for (b, c) in [(1.0, 0.0), (2.0, 0.0), (0.0, 1.0 + eta), (0.0, 2.0 + eta)] {
        for lambda in [0.0, 1.0] {
            let p = IntEstParams::new(b, c, 1.0, lambda, 1.0).unwrap();
            let (lo, hi) = int_est_ratio(&p, &xs).unwrap();
            assert!(lo > 0.01 && hi < 100.0, "b={b} c={c} l={lambda}: {lo} {hi}");
        }
    }
    assert!(IntEstParams::new(2.0, 1.0, 1.0, 0.0, 1.0).is_err());
}
