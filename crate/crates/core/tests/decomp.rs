use std::f64::consts::PI;
use std::sync::Arc;

use nsasym::decomp::*;
use nsasym::fields::{divergence, fd_laplacian, space_fn, SphereRule};
use nsasym::quadrature::{refine, GaussLegendre};
use nsasym::{Error, FieldHandle, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar(f: impl Fn(Vec3<f64>) -> f64 + Send + Sync + 'static) -> FieldHandle<f64, f64> {
    Arc::new(space_fn(f))
}

fn rational(x: Vec3<f64>) -> f64 {
    (1.0 + x.norm2()).powi(-3)
}

/// `4 pi int_0^R g(r) r^2 dr` for a radial function sampled along an axis.
fn radial_mass(g: &FieldHandle<f64, f64>, r_max: f64, breaks: &[f64]) -> f64 {
    let gl = GaussLegendre::<f64>::new(20);
    let mut br: Vec<f64> = breaks.iter().copied().filter(|&b| b > 0.0 && b < r_max).collect();
    br.insert(0, 0.0);
    br.push(r_max);
    let br = refine(&br, r_max / 64.0);
    4.0 * PI * gl.composite(&br, |r| g.eval(0.0, Vec3::new(0.0, 0.0, r)) * r * r)
}

fn random_point(rng: &mut ChaCha8Rng, r_max: f64) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 && v.norm() > 1e-3 {
            return v * r_max;
        }
    }
}

#[test]
fn smooth_profiles() {
    for i in 0..=40 {
        let r = 0.05 + 4.0 * i as f64 / 40.0;
        // dyadic partition of unity
        let s: f64 = (-12..12).map(|k| dyadic_bump(r * 2f64.powi(-k))).sum();
        assert!((s - 1.0).abs() < 1e-14, "r={r}");
    }
    // derivative of the smooth step
    for u in [0.1f64, 0.3, 0.5, 0.77] {
        let h = 1e-6;
        let fd = (smooth_step(u + h).0 - smooth_step(u - h).0) / (2.0 * h);
        assert!((smooth_step(u).1 - fd).abs() < 1e-8);
    }
    assert_eq!(telescoping_cutoff(-0.6).0, 0.0);
    assert_eq!(telescoping_cutoff(0.6).0, 1.0);
}

#[test]
fn reconstruction_and_support() {
    let f = scalar(rational);
    let d = decompose_force(f.clone(), 1.0, 6.0, 1.0, &DecompOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_point(&mut rng, 30.0);
        let div = divergence(d.flux.as_ref(), 0.0, x, 1e-3).unwrap();
        let res = rational(x) - d.f0.eval(0.0, x) - div;
        worst = worst.max(res.abs());
    }
    assert!(worst < 1e-5, "worst residual {worst:e}");
    for x in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.6, 0.6, 0.6), Vec3::new(0.0, -3.0, 0.2)] {
        assert_eq!(d.f0.eval(0.0, x), 0.0);
    }
}

#[test]
fn mass_is_preserved() {
    let f = scalar(rational);
    let d = decompose_force(f, 1.0, 6.0, 1.0, &DecompOptions::default()).unwrap();
    // int (1+r^2)^{-3} d^3x = pi^2 / 4
    let exact = PI * PI / 4.0;
    assert!((d.mass - exact).abs() < 1e-9, "{}", d.mass);
    let m0 = radial_mass(&d.f0, 1.0, &[0.25, 0.5, 1.0]);
    assert!((m0 - exact).abs() < 1e-6, "{m0} vs {exact}");
}

#[test]
fn pieces_have_zero_mean() {
    let f = scalar(rational);
    let d = decompose_force(f, 1.0, 6.0, 1.0, &DecompOptions::default()).unwrap();
    for k in 1..8 {
        let s = 0.5 * 2f64.powi(k);
        let p = d.piece(k as usize);
        let mass = radial_mass(&p, 2.0 * s, &[0.25 * s, 0.5 * s, s]);
        let pv = p.clone();
        let scale = radial_mass(&scalar(move |x| pv.eval(0.0, x).abs()), 2.0 * s, &[0.25 * s, 0.5 * s, s]);
        assert!(mass.abs() < 1e-8 * scale.max(1e-300) || mass.abs() < 1e-12, "k={k} mass={mass:e}");
        // support in 2^{k-2} <= |x|/L <= 2^{k+1}
        assert_eq!(p.eval(0.0, Vec3::new(0.0, 0.24 * s, 0.0)), 0.0);
        assert_eq!(p.eval(0.0, Vec3::new(2.01 * s, 0.0, 0.0)), 0.0);
    }
}

#[test]
fn flux_field_decays() {
    let f = scalar(rational);
    let d = decompose_force(f, 1.0, 6.0, 1.0, &DecompOptions::default()).unwrap();
    assert!(d.decay_constant.is_finite() && d.decay_constant > 0.0);
    assert!(d.dyadic_depth > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let r = 100f64.powf(rng.gen_range(0.0..1.0));
        let x = random_point(&mut rng, 1.0).normalized().unwrap() * r;
        let w = d.flux.eval(0.0, x).norm() * (1.0 + r * r).powf(2.5);
        assert!(w <= 2.0 * d.decay_constant, "|x|={r} weighted={w} C={}", d.decay_constant);
    }
}

#[test]
fn decomposition_is_linear() {
    let opts = DecompOptions::default();
    let g = |x: Vec3<f64>| (1.0 + (x - Vec3::new(1.0, 0.0, 0.0)).norm2()).powi(-2);
    // (1+|x-e|^2)^{-1} <= ((3+sqrt 5)/2) (1+|x|^2)^{-1}
    let m2 = 7.0;
    let d1 = decompose_force(scalar(rational), 1.0, 4.0, 1.0, &opts).unwrap();
    let d2 = decompose_force(scalar(g), 1.0, 4.0, m2, &opts).unwrap();
    let d3 = decompose_force(scalar(move |x| rational(x) + 2.0 * g(x)), 1.0, 4.0, 1.0 + 2.0 * m2, &opts).unwrap();
    for x in [Vec3::new(0.3, -0.2, 0.1), Vec3::new(2.0, 1.0, -1.5), Vec3::new(-7.0, 3.0, 11.0)] {
        let a = d3.flux.eval(0.0, x);
        let b = d1.flux.eval(0.0, x) + d2.flux.eval(0.0, x) * 2.0;
        assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()), "{a:?} {b:?}");
        let f0 = d3.f0.eval(0.0, x) - d1.f0.eval(0.0, x) - 2.0 * d2.f0.eval(0.0, x);
        assert!(f0.abs() < 1e-12);
    }
}

#[test]
fn decomposition_errors() {
    let opts = DecompOptions::default();
    let e = decompose_force(scalar(rational), 1.0, 3.0, 1.0, &opts).unwrap_err();
    assert!(matches!(e, Error::Domain(_)));
    // (1+r^2)^{-2} violates M <x>^{-6}
    let e = decompose_force(scalar(|x| (1.0 + x.norm2()).powi(-2)), 1.0, 6.0, 1.0, &opts).unwrap_err();
    assert!(matches!(e, Error::Contract(_)), "{e:?}");
}

const C0: f64 = 0.5;

fn trig_data() -> BoundaryData<f64> {
    Arc::new(|a: f64, b: f64| {
        Vec3::new((PI * a).sin() * (PI * b).cos(), 0.0, C0 * (PI * a).sin() * (PI * b).sin())
    })
}

fn interior_samples(n: usize, seed: u64) -> Vec<Vec3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(0.01..0.24)))
        .collect()
}

#[test]
fn flat_extension_is_divergence_free() {
    let ext = extend_flat(trig_data(), &ExtensionOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for x in interior_samples(100, 3) {
        worst = worst.max(divergence(ext.field.as_ref(), 0.0, x, 1e-5).unwrap().abs());
    }
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn flat_extension_boundary_trace() {
    let data = trig_data();
    let ext = extend_flat(data.clone(), &ExtensionOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let (a, b) = (rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95));
        let want = data(a, b);
        let at0 = ext.field.eval(0.0, Vec3::new(a, b, 0.0));
        let near = ext.field.eval(0.0, Vec3::new(a, b, 1e-8));
        assert!((at0 - want).norm() < 1e-12);
        assert!((near - want).norm() < 1e-6, "{near:?} {want:?}");
    }
}

#[test]
fn flat_extension_support() {
    let ext = extend_flat(trig_data(), &ExtensionOptions::default()).unwrap();
    assert_eq!(ext.support, SupportSlab { half_width: 1.125, height: 0.25, graph: false });
    for x in [
        Vec3::new(0.3, 0.2, 0.26),
        Vec3::new(0.3, 0.2, 0.9),
        Vec3::new(1.13, 0.0, 0.1),
        Vec3::new(0.0, -1.2, 0.05),
        Vec3::new(0.1, 0.1, -0.01),
    ] {
        assert_eq!(ext.field.eval(0.0, x), Vec3::zero());
    }
    // the mollifier reaches slightly beyond K
    assert!(ext.field.eval(0.0, Vec3::new(0.5, 1.01, 0.2)).norm() > 0.0);
}

#[test]
fn flat_extension_linear_and_flux_checked() {
    let opts = ExtensionOptions::default();
    let d1 = trig_data();
    let d2: BoundaryData<f64> = Arc::new(|a: f64, b: f64| {
        let bump = (1.0 - a * a).powi(3) * (1.0 - b * b).powi(3);
        Vec3::new(a * bump, bump, a * b * bump)
    });
    let (c1, c2) = (d1.clone(), d2.clone());
    let d3: BoundaryData<f64> = Arc::new(move |a, b| c1(a, b) * 2.0 - c2(a, b) * 3.0);
    let e1 = extend_flat(d1, &opts).unwrap();
    let e2 = extend_flat(d2, &opts).unwrap();
    let e3 = extend_flat(d3, &opts).unwrap();
    for x in interior_samples(10, 9) {
        let want = e1.field.eval(0.0, x) * 2.0 - e2.field.eval(0.0, x) * 3.0;
        assert!((e3.field.eval(0.0, x) - want).norm() < 1e-12);
    }
    let bad: BoundaryData<f64> = Arc::new(|_, _| Vec3::new(0.0, 0.0, 1.0));
    assert!(matches!(extend_flat(bad, &opts), Err(Error::Contract(_))));
}

fn wavy() -> GraphFn<f64> {
    Arc::new(|a: f64, b: f64| {
        let (ca, cb) = ((PI * a).cos(), (PI * b).cos());
        let (sa, sb) = ((PI * a).sin(), (PI * b).sin());
        (0.1 * ca * cb, -0.1 * PI * sa * cb, -0.1 * PI * ca * sb)
    })
}

/// Tangential-plus-normal data on the wavy graph with zero flux through it.
fn graph_data(h: GraphFn<f64>) -> BoundaryData<f64> {
    Arc::new(move |a: f64, b: f64| {
        let (_, h1, h2) = h(a, b);
        let u1 = (PI * a).sin() * (PI * b).cos();
        let u2 = 0.3 * (PI * b).sin();
        // u . (h1, h2, -1) = -C0 sin sin, which integrates to zero over K
        let u3 = u1 * h1 + u2 * h2 + C0 * (PI * a).sin() * (PI * b).sin();
        Vec3::new(u1, u2, u3)
    })
}

#[test]
fn graph_extension() {
    let opts = ExtensionOptions::default();
    let h = wavy();
    let data = graph_data(h.clone());
    let ext = extend_graph(data.clone(), h.clone(), &opts).unwrap();
    assert!(ext.support.graph);
    let mut worst = 0.0f64;
    for p in interior_samples(60, 13) {
        let x = Vec3::new(p[0], p[1], p[2] + h(p[0], p[1]).0);
        worst = worst.max(divergence(ext.field.as_ref(), 0.0, x, 1e-5).unwrap().abs());
    }
    assert!(worst < 1e-5, "{worst:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95));
        let x = Vec3::new(a, b, h(a, b).0 + 1e-8);
        assert!((ext.field.eval(0.0, x) - data(a, b)).norm() < 1e-6);
    }
}

#[test]
fn flat_graph_reduces_to_flat() {
    let opts = ExtensionOptions::default();
    let zero: GraphFn<f64> = Arc::new(|_, _| (0.0, 0.0, 0.0));
    let g = extend_graph(trig_data(), zero, &opts).unwrap();
    let f = extend_flat(trig_data(), &opts).unwrap();
    for x in interior_samples(10, 21) {
        assert_eq!(g.field.eval(0.0, x), f.field.eval(0.0, x));
    }
    let tall: GraphFn<f64> = Arc::new(|a: f64, _| (0.3 * a, 0.3, 0.0));
    assert!(matches!(extend_graph(trig_data(), tall, &opts), Err(Error::Domain(_))));
}

/// Two-plate extension between `x3 = 0` and `x3 = 1` for purely normal data
/// with equal fluxes; kept as a fixture next to the one-plate construction.
fn two_plate(v0: fn(f64, f64) -> f64, v1: fn(f64, f64) -> f64, x: Vec3<f64>) -> Vec3<f64> {
    let gl = GaussLegendre::<f64>::new(20);
    let psi = |s: f64| {
        let (c, dc) = chart_cutoff(s);
        (1.0 - c, -dc)
    };
    let dv = |a: f64, b: f64| if a.abs() < 1.0 && b.abs() < 1.0 { v0(a, b) - v1(a, b) } else { 0.0 };
    let col = |a: f64, up: f64| {
        let hi = up.clamp(-1.0, 1.0);
        gl.composite(&refine(&[-1.0, hi], 0.125), |s| dv(a, s))
    };
    let (p2, dp2) = psi(x[1]);
    let g = col(x[0], 1.0);
    let f1 = dp2 * gl.composite(&refine(&[-1.0, x[0].clamp(-1.0, 1.0)], 0.125), |s| col(s, 1.0));
    let f2 = col(x[0], x[1]) - g * p2;
    let (p3, dp3) = psi(x[2]);
    Vec3::new(dp3 * f1, dp3 * f2, (1.0 - p3) * v0(x[0], x[1]) + p3 * v1(x[0], x[1]))
}

#[test]
fn two_plate_fixture() {
    fn v0(a: f64, b: f64) -> f64 {
        (1.0 - a * a).powi(2) * (1.0 - b * b).powi(2)
    }
    fn v1(a: f64, b: f64) -> f64 {
        (1.0 - a * a).powi(2) * (1.0 - b * b).powi(2) * (1.0 + 0.5 * (PI * a).sin())
    }
    let f = space_fn(|x: Vec3<f64>| two_plate(v0, v1, x));
    for x in interior_samples(20, 23) {
        let d = divergence(&f, 0.0, x, 1e-5).unwrap();
        assert!(d.abs() < 1e-6, "{d:e}");
    }
    let top = two_plate(v0, v1, Vec3::new(0.2, -0.3, 1.0));
    assert!((top[2] - v1(0.2, -0.3)).abs() < 1e-14 && top[0] == 0.0);
}

fn two_spheres() -> [Sphere<f64>; 2] {
    [Sphere::new(Vec3::zero(), 1.0), Sphere::new(Vec3::new(5.0, 0.0, 0.0), 1.0)]
}

#[test]
fn harmonic_flux_normalization() {
    let s = two_spheres();
    let rule = SphereRule::<f64>::new(32, 64).unwrap();
    for l in 0..2 {
        // data with unit flux through sphere l only gives H = H_0(x - x_l)
        let sp = s;
        let data = move |k: usize, x: Vec3<f64>| {
            if k == l {
                (sp[k].center - x).normalized().unwrap()
            } else {
                Vec3::zero()
            }
        };
        let h = harmonic_part(&data, &s, &rule).unwrap();
        assert!((h.fluxes[l] - 1.0).abs() < 1e-12 && h.fluxes[1 - l].abs() < 1e-15);
        for (k, sk) in s.iter().enumerate() {
            let mut flux = 0.0;
            for (w, wt) in &rule.nodes {
                flux -= h.gradient.eval(0.0, sk.center + *w * sk.radius).dot(w) * wt * sk.radius * sk.radius;
            }
            let want = if k == l { 4.0 * PI } else { 0.0 };
            assert!((flux - want).abs() < 1e-10, "k={k} l={l} flux={flux}");
        }
    }
}

#[test]
fn harmonic_part_is_harmonic_and_absorbs_flux() {
    let s = two_spheres();
    let rule = SphereRule::<f64>::new(24, 48).unwrap();
    let sp = s;
    let outflow = move |k: usize, x: Vec3<f64>| (sp[k].center - x).normalized().unwrap();
    let h = harmonic_part(&outflow, &s, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut n = 0;
    while n < 30 {
        let x = Vec3::new(rng.gen_range(-4.0..9.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        if s.iter().any(|c| (x - c.center).norm() < 1.5) {
            continue;
        }
        let lap = fd_laplacian(h.potential.as_ref(), 0.0, x, 1e-3).unwrap();
        assert!(lap.abs() < 1e-6, "{lap:e}");
        n += 1;
    }
    for (k, sk) in s.iter().enumerate() {
        let mut res = 0.0;
        for (w, wt) in &rule.nodes {
            let x = sk.center + *w * sk.radius;
            let normal = *w * -1.0;
            res += (outflow(k, x) - h.gradient.eval(0.0, x)).dot(&normal) * wt;
        }
        assert!(res.abs() < 1e-8, "k={k} residual {res:e}");
    }
    let overlap = [Sphere::new(Vec3::zero(), 1.0), Sphere::new(Vec3::new(1.5, 0.0, 0.0), 1.0)];
    assert!(matches!(harmonic_part(&outflow, &overlap, &rule), Err(Error::Domain(_))));
}
