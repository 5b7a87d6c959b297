//! Force decomposition and divergence-free boundary extension.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use nsasym::decomp::*;
use nsasym::fields::{divergence, space_fn, SphereRule};
use nsasym::quadrature::{refine, GaussLegendre};
use nsasym::{FieldHandle, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{nan_max, rng, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{write_json, CsvOut, Relation::*, Section};

fn scalar(f: impl Fn(Vec3<f64>) -> f64 + Send + Sync + 'static) -> FieldHandle<f64, f64> {
    Arc::new(space_fn(f))
}

/// `(1 + |x|^2)^{-3}`, of mass `pi^2 / 4`.
fn rational(x: Vec3<f64>) -> f64 {
    (1.0 + x.norm2()).powi(-3)
}

/// `(1 + |x - e_1|^2)^{-2}`, bounded by `7 <x>^{-4}`.
fn shifted(x: Vec3<f64>) -> f64 {
    (1.0 + (x - Vec3::new(1.0, 0.0, 0.0)).norm2()).powi(-2)
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

/// `int_{|x| < R} g` with radial panels times a product sphere rule.
fn ball_integral(g: &FieldHandle<f64, f64>, r_max: f64) -> f64 {
    let gl = GaussLegendre::<f64>::new(16);
    let rule = SphereRule::<f64>::new(16, 32).expect("valid rule");
    let br = refine(&[0.0, 0.25 * r_max, 0.5 * r_max, r_max], r_max / 32.0);
    gl.composite(&br, |r| r * r * rule.nodes.iter().map(|(n, w)| w * g.eval(0.0, *n * r)).sum::<f64>())
}

fn random_point(rng: &mut ChaCha8Rng, r_max: f64) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 && v.norm() > 1e-3 {
            return v * r_max;
        }
    }
}

const C0: f64 = 0.5;

fn trig_data() -> BoundaryData<f64> {
    Arc::new(|a: f64, b: f64| Vec3::new((PI * a).sin() * (PI * b).cos(), 0.0, C0 * (PI * a).sin() * (PI * b).sin()))
}

fn wavy() -> GraphFn<f64> {
    Arc::new(|a: f64, b: f64| {
        let (ca, cb) = ((PI * a).cos(), (PI * b).cos());
        let (sa, sb) = ((PI * a).sin(), (PI * b).sin());
        (0.1 * ca * cb, -0.1 * PI * sa * cb, -0.1 * PI * ca * sb)
    })
}

/// Data on the wavy graph whose normal component integrates to zero over the chart.
fn graph_data(h: GraphFn<f64>) -> BoundaryData<f64> {
    Arc::new(move |a: f64, b: f64| {
        let (_, h1, h2) = h(a, b);
        let u1 = (PI * a).sin() * (PI * b).cos();
        let u2 = 0.3 * (PI * b).sin();
        Vec3::new(u1, u2, u1 * h1 + u2 * h2 + C0 * (PI * a).sin() * (PI * b).sin())
    })
}

fn chart_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(0.01..0.24)))
        .collect()
}

/// Worst `|div E|` over chart samples lifted onto the graph `h`, and the worst trace
/// mismatch just above the boundary.
fn extension_defects(ext: &ExtensionResult<f64>, data: &BoundaryData<f64>, h: &GraphFn<f64>, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut div = 0.0f64;
    for p in chart_samples(rng, 60) {
        let x = Vec3::new(p[0], p[1], p[2] + h(p[0], p[1]).0);
        div = nan_max(div, divergence(ext.field.as_ref(), 0.0, x, 1e-5).map_or(f64::NAN, f64::abs));
    }
    let mut trace = 0.0f64;
    for _ in 0..30 {
        let (a, b) = (rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95));
        let x = Vec3::new(a, b, h(a, b).0 + 1e-8);
        trace = nan_max(trace, (ext.field.eval(0.0, x) - data(a, b)).norm());
    }
    (div, trace)
}

/// Nonzero values found outside the certified slab `|x'|_inf < w`, `0 <= x3 - h(x') < height`.
fn slab_leaks(ext: &ExtensionResult<f64>, h: &GraphFn<f64>, rng: &mut ChaCha8Rng) -> usize {
    let slab = ext.support;
    let w = slab.half_width;
    let mut leaks = 0;
    for i in 0..200 {
        let x = if i % 2 == 0 {
            let (a, b) = (rng.gen_range(-w..w), rng.gen_range(-w..w));
            let base = h(a, b).0;
            let z = if i % 4 == 0 { base + slab.height + rng.gen_range(1e-3..1.0) } else { base - rng.gen_range(1e-3..1.0) };
            Vec3::new(a, b, z)
        } else {
            let off = rng.gen_range(w + 1e-3..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let other = rng.gen_range(-3.0..3.0);
            let (a, b) = if i % 4 == 1 { (off, other) } else { (other, off) };
            Vec3::new(a, b, rng.gen_range(-1.0..1.0))
        };
        if ext.field.eval(0.0, x) != Vec3::zero() {
            leaks += 1;
        }
    }
    leaks
}

pub fn verify(seed: u64) -> SuiteOutput {
    let mut s = Section::new("decomp");
    let mut tm = Timings::default();
    let opts = DecompOptions::default();

    tm.time(7, || {
        let d = match decompose_force(scalar(rational), 1.0, 6.0, 1.0, &opts) {
            Ok(d) => d,
            Err(e) => {
                for name in ["reconstruction_residual", "mass_defect", "decay_certificate", "piece_zero_integrals", "f0_support"] {
                    s.failed(name, Lt, 0.0, &[7], &e);
                }
                return;
            }
        };
        let mut r = rng(seed, 40);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let x = random_point(&mut r, 30.0);
            let div = divergence(d.flux.as_ref(), 0.0, x, 1e-3).unwrap_or(f64::NAN);
            worst = nan_max(worst, (rational(x) - d.f0.eval(0.0, x) - div).abs());
        }
        s.check("reconstruction_residual", worst, Lt, 1e-5, &[7]);

        let exact = PI * PI / 4.0;
        let m0 = radial_mass(&d.f0, 1.0, &[0.25, 0.5, 1.0]);
        s.constant("mass", d.mass);
        s.constant("f0_mass", m0);
        s.check("mass_defect", nan_max((m0 - exact).abs(), (d.mass - exact).abs()), Lt, 1e-6, &[7]);

        let mut ratio = 0.0f64;
        for _ in 0..30 {
            let rad = 100f64.powf(r.gen_range(0.0..1.0));
            let x = super::random_direction(&mut r) * rad;
            let w = d.flux.eval(0.0, x).norm() * (1.0 + rad * rad).powf(2.5);
            ratio = nan_max(ratio, w / d.decay_constant);
        }
        s.constant("decay_constant", d.decay_constant);
        s.constant("dyadic_depth", d.dyadic_depth as f64);
        s.check("decay_certificate", ratio, Le, 2.0, &[7]);

        let mut piece = 0.0f64;
        let mut leaks = 0usize;
        for k in 1..8 {
            let sc = 0.5 * 2f64.powi(k);
            let p = d.piece(k as usize);
            let mass = radial_mass(&p, 2.0 * sc, &[0.25 * sc, 0.5 * sc, sc]);
            let pv = p.clone();
            let scale = radial_mass(&scalar(move |x| pv.eval(0.0, x).abs()), 2.0 * sc, &[0.25 * sc, 0.5 * sc, sc]);
            piece = nan_max(piece, mass.abs() / scale.max(1e-300));
            for x in [Vec3::new(0.0, 0.24 * sc, 0.0), Vec3::new(2.01 * sc, 0.0, 0.0), Vec3::new(0.0, 0.0, -5.0 * sc)] {
                leaks += (p.eval(0.0, x) != 0.0) as usize;
            }
        }
        s.check("piece_zero_integrals", piece, Lt, 1e-8, &[7]);
        s.check("piece_supports", leaks as f64, Le, 0.0, &[7]);

        let mut f0_leaks = 0usize;
        for _ in 0..100 {
            let x = super::random_direction(&mut r) * r.gen_range(1.0..50.0);
            f0_leaks += (d.f0.eval(0.0, x) != 0.0) as usize;
        }
        s.check("f0_support", f0_leaks as f64, Le, 0.0, &[7]);
    });

    match (
        decompose_force(scalar(rational), 1.0, 4.0, 1.0, &opts),
        decompose_force(scalar(shifted), 1.0, 4.0, 7.0, &opts),
        decompose_force(scalar(|x| rational(x) + 2.0 * shifted(x)), 1.0, 4.0, 15.0, &opts),
    ) {
        (Ok(d1), Ok(d2), Ok(d3)) => {
            let mut lin = 0.0f64;
            for x in [Vec3::new(0.3, -0.2, 0.1), Vec3::new(2.0, 1.0, -1.5), Vec3::new(-7.0, 3.0, 11.0)] {
                let b = d1.flux.eval(0.0, x) + d2.flux.eval(0.0, x) * 2.0;
                lin = nan_max(lin, (d3.flux.eval(0.0, x) - b).norm() / (1.0 + b.norm()));
                lin = nan_max(lin, (d3.f0.eval(0.0, x) - d1.f0.eval(0.0, x) - 2.0 * d2.f0.eval(0.0, x)).abs());
            }
            s.check("decompose_linear", lin, Lt, 1e-10, &[]);
        }
        _ => s.failed("decompose_linear", Lt, 1e-10, &[], "decomposition failed"),
    }

    tm.time(8, || {
        let eo = ExtensionOptions::default();
        let mut r = rng(seed, 41);
        let flat: GraphFn<f64> = Arc::new(|_, _| (0.0, 0.0, 0.0));
        match extend_flat(trig_data(), &eo) {
            Ok(ext) => {
                let (div, trace) = extension_defects(&ext, &trig_data(), &flat, &mut r);
                s.check("flat_divergence", div, Lt, 1e-5, &[8]);
                s.check("flat_boundary_trace", trace, Lt, 1e-6, &[8]);
                s.check("flat_support", slab_leaks(&ext, &flat, &mut r) as f64, Le, 0.0, &[8]);
            }
            Err(e) => {
                for name in ["flat_divergence", "flat_boundary_trace", "flat_support"] {
                    s.failed(name, Lt, 1e-5, &[8], &e);
                }
            }
        }
        let h = wavy();
        let data = graph_data(h.clone());
        match extend_graph(data.clone(), h.clone(), &eo) {
            Ok(ext) => {
                let (div, trace) = extension_defects(&ext, &data, &h, &mut r);
                s.check("graph_divergence", div, Lt, 1e-5, &[8]);
                s.check("graph_boundary_trace", trace, Lt, 1e-6, &[8]);
                s.check("graph_support", slab_leaks(&ext, &h, &mut r) as f64, Le, 0.0, &[8]);
            }
            Err(e) => {
                for name in ["graph_divergence", "graph_boundary_trace", "graph_support"] {
                    s.failed(name, Lt, 1e-5, &[8], &e);
                }
            }
        }

        let spheres = [Sphere::new(Vec3::zero(), 1.0), Sphere::new(Vec3::new(5.0, 0.0, 0.0), 1.0)];
        let rule = SphereRule::<f64>::new(32, 64).expect("valid rule");
        let mut norm_err = 0.0f64;
        for l in 0..2 {
            let sp = spheres;
            let data = move |k: usize, x: Vec3<f64>| if k == l { (sp[k].center - x) * (1.0 / (sp[k].center - x).norm()) } else { Vec3::zero() };
            let Ok(hp) = harmonic_part(&data, &spheres, &rule) else {
                norm_err = f64::NAN;
                continue;
            };
            for (k, sk) in spheres.iter().enumerate() {
                let mut flux = 0.0;
                for (w, wt) in &rule.nodes {
                    flux -= hp.gradient.eval(0.0, sk.center + *w * sk.radius).dot(w) * wt * sk.radius * sk.radius;
                }
                let want = if k == l { 4.0 * PI } else { 0.0 };
                norm_err = nan_max(norm_err, (flux - want).abs());
            }
        }
        s.check("harmonic_flux_normalization", norm_err, Lt, 1e-10, &[8]);
    });

    let eo = ExtensionOptions::default();
    let d2: BoundaryData<f64> = Arc::new(|a: f64, b: f64| {
        let bump = (1.0 - a * a).powi(3) * (1.0 - b * b).powi(3);
        Vec3::new(a * bump, bump, a * b * bump)
    });
    let (c1, c2) = (trig_data(), d2.clone());
    let d3: BoundaryData<f64> = Arc::new(move |a, b| c1(a, b) * 2.0 - c2(a, b) * 3.0);
    match (extend_flat(trig_data(), &eo), extend_flat(d2, &eo), extend_flat(d3, &eo)) {
        (Ok(e1), Ok(e2), Ok(e3)) => {
            let mut r = rng(seed, 42);
            let mut lin = 0.0f64;
            for x in chart_samples(&mut r, 10) {
                let want = e1.field.eval(0.0, x) * 2.0 - e2.field.eval(0.0, x) * 3.0;
                lin = nan_max(lin, (e3.field.eval(0.0, x) - want).norm());
            }
            s.check("extend_flat_linear", lin, Lt, 1e-12, &[]);
        }
        _ => s.failed("extend_flat_linear", Lt, 1e-12, &[], "extension failed"),
    }

    SuiteOutput { section: s, timings: tm }
}

#[derive(Serialize)]
struct Certificate {
    field: String,
    support_radius: f64,
    decay_exponent: f64,
    decay_constant: f64,
    dyadic_depth: usize,
    mass: f64,
    f0_mass: f64,
    mass_defect: f64,
    max_reconstruction_residual: f64,
    f0_support_violations: usize,
    coefficients: Vec<f64>,
}

/// `decompose` subcommand: residuals at random points and a JSON certificate.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let name = cfg.text("field").to_string();
    let (radius, a, n, ball) = (cfg.float("radius"), cfg.float("a"), cfg.int("samples"), cfg.float("sample_radius"));
    let (f, m): (fn(Vec3<f64>) -> f64, f64) = match name.as_str() {
        "rational" => (rational, 1.0),
        _ => (shifted, 7.0),
    };
    let d = decompose_force(scalar(f), radius, a, m, &DecompOptions::default())?;

    let mut r = rng(cfg.seed, 43);
    let header = ["x1", "x2", "x3", "f", "f0", "div_F", "residual"];
    let meta = [("field", name.clone()), ("R", format!("{radius:e}")), ("a", format!("{a:e}"))];
    let mut csv = CsvOut::create(&cfg.output_dir.join("decompose.csv"), &meta, &header)?;
    let mut worst = 0.0f64;
    let mut leaks = 0usize;
    for _ in 0..n {
        let x = random_point(&mut r, ball);
        let fx = f(x);
        let f0 = d.f0.eval(0.0, x);
        let div = divergence(d.flux.as_ref(), 0.0, x, 1e-3)?;
        let res = fx - f0 - div;
        worst = nan_max(worst, res.abs());
        if x.norm() >= d.support_radius && f0 != 0.0 {
            leaks += 1;
        }
        csv.row(&[x[0], x[1], x[2], fx, f0, div, res])?;
    }
    csv.finish()?;

    let f0_mass = ball_integral(&d.f0, d.support_radius);
    let cert = Certificate {
        field: name,
        support_radius: d.support_radius,
        decay_exponent: a - 1.0,
        decay_constant: d.decay_constant,
        dyadic_depth: d.dyadic_depth,
        mass: d.mass,
        f0_mass,
        mass_defect: (f0_mass - d.mass).abs(),
        max_reconstruction_residual: worst,
        f0_support_violations: leaks,
        coefficients: d.coefficients.clone(),
    };
    write_json(&cfg.output_dir.join("decompose.json"), &cert)?;

    let mut s = Section::new("decomp");
    s.constant("support_radius", cert.support_radius);
    s.constant("decay_constant", cert.decay_constant);
    s.constant("mass", cert.mass);
    s.check("reconstruction_residual", worst, Lt, 1e-5, &[7]);
    s.check("mass_defect", cert.mass_defect, Lt, 1e-6, &[7]);
    s.check("f0_support", leaks as f64, Le, 0.0, &[7]);
    println!(
        "support radius {:e}, decay constant {:.6e}, mass defect {:.3e}, max residual {:.3e}",
        cert.support_radius, cert.decay_constant, cert.mass_defect, worst
    );
    Ok(RunOutput { sections: vec![s], grid: None })
}
