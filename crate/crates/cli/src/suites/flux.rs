//! Momentum flux through spheres and extraction of the far-field constant `b`.

use std::f64::consts::PI;

use serde::Serialize;

use nsasym::fields::{space_fn, Rotated, SphereRule, Zero};
use nsasym::flux::*;
use nsasym::landau::LandauPressure;
use nsasym::{Landau, Mat3, Vec3};

use super::{nan_max, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{write_json, CsvOut, Relation::*, Section};

fn cfg(radii: &[f64]) -> FluxConfig {
    FluxConfig { radii: radii.to_vec(), ..Default::default() }
}

fn zero_t() -> Zero<Mat3<f64>> {
    Zero::new()
}

/// Smooth radial step from 0 at `r1` to 1 at `r2`, with its derivative.
fn radial_step(r: f64, r1: f64, r2: f64) -> (f64, f64) {
    let e = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    let u = (r - r1) / (r2 - r1);
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, b) = (e(u), e(1.0 - u));
    let d = a * b * (1.0 / (u * u) + 1.0 / ((1.0 - u) * (1.0 - u))) / ((a + b) * (a + b) * (r2 - r1));
    (a / (a + b), d)
}

pub fn verify(_seed: u64) -> SuiteOutput {
    let mut s = Section::new("flux");
    let mut tm = Timings::default();
    let sol = Landau::from_a(2.0, Vec3::unit(2)).expect("A > 1");
    let p = LandauPressure(sol);
    let bn = sol.b.norm();

    tm.time(3, || {
        let mut worst = 0.0f64;
        for rho in [2.0, 4.0, 8.0] {
            let e = flux_integral(&sol, &p, &zero_t(), rho, &cfg(&[rho])).map_or(f64::NAN, |i| (i - sol.b).norm() / bn);
            worst = nan_max(worst, e);
        }
        s.check("flux_matches_b", worst, Lt, 1e-3, &[3]);
        match extract_b(&sol, &p, &zero_t(), &cfg(&[2.0, 4.0, 8.0])) {
            Ok((b, table)) => {
                s.check("flux_spread", table.spread / bn, Lt, 1e-3, &[3]);
                s.check("extracted_b", (b - sol.b).norm() / bn, Lt, 1e-3, &[3]);
                s.constant("extracted_b_norm", b.norm());
            }
            Err(e) => {
                s.failed("flux_spread", Lt, 1e-3, &[3], &e);
                s.failed("extracted_b", Lt, 1e-3, &[3], &e);
            }
        }
    });

    let q = Mat3::rotation(Vec3::new(1.0, 0.0, 0.0), PI / 2.0);
    let ru = Rotated { inner: sol, q };
    let rp = Rotated { inner: p, q };
    let rot = match (extract_b(&ru, &rp, &zero_t(), &cfg(&[2.0, 4.0, 8.0])), extract_b(&sol, &p, &zero_t(), &cfg(&[2.0, 4.0, 8.0]))) {
        (Ok((b, _)), Ok((b0, _))) => (b - q.apply(&b0)).norm() / b0.norm(),
        _ => f64::NAN,
    };
    s.check("rotation_equivariance", rot, Lt, 1e-6, &[]);

    let g = space_fn(|x: Vec3<f64>| {
        let mut m = Mat3::zero();
        m.0[0][2] = x[0] * x[2];
        m.0[2][2] = 1.0 + x[1] * x[1];
        m.0[1][0] = x[2].sin();
        m
    });
    let rho = 3.0;
    let c = cfg(&[rho]);
    let lin = match (flux_integral(&sol, &p, &zero_t(), rho, &c), flux_integral(&sol, &p, &g, rho, &c)) {
        (Ok(a), Ok(b)) => {
            let rule = SphereRule::<f64>::new(c.sphere_theta, c.sphere_phi).expect("valid rule");
            let mut gn = Vec3::zero();
            for &(n, w) in &rule.nodes {
                gn += nsasym::Field::eval(&g, 0.0, n * rho).apply_t(&n) * (w * rho * rho);
            }
            (b - a + gn).norm() / (1.0 + a.norm())
        }
        _ => f64::NAN,
    };
    s.check("linear_in_source", lin, Lt, 1e-10, &[]);

    let idem = match (
        flux_integral(&sol, &p, &zero_t(), 4.0, &cfg(&[4.0])),
        flux_integral(&sol, &p, &zero_t(), 4.0, &FluxConfig { time_nodes: 16, ..cfg(&[4.0]) }),
    ) {
        (Ok(a), Ok(b)) => (a - b).norm() / a.norm(),
        _ => f64::NAN,
    };
    s.check("time_average_idempotent", idem, Lt, 1e-12, &[]);

    let bad = [
        cfg(&[]),
        cfg(&[2.0, 2.0]),
        cfg(&[-1.0]),
        FluxConfig { time_nodes: 0, ..Default::default() },
        FluxConfig { period: 0.0, ..Default::default() },
    ];
    let accepted = bad.iter().filter(|c| extract_b(&sol, &p, &zero_t(), c).is_ok()).count();
    s.check("invalid_configs_rejected", accepted as f64, Le, 0.0, &[]);

    // F_ij = -n_i e3_j m S(r) / (4 pi r^2) has -div F = e3 m S'(r) / (4 pi r^2)
    let (m, r1, r2) = (2.5, 3.0, 5.0);
    let f = space_fn(move |x: Vec3<f64>| {
        let r = x.norm();
        (x * (1.0 / r)).outer(&Vec3::unit(2)) * (-m * radial_step(r, r1, r2).0 / (4.0 * PI * r * r))
    });
    let f0 = space_fn(move |x: Vec3<f64>| {
        let r = x.norm();
        Vec3::unit(2) * (m * radial_step(r, r1, r2).1 / (4.0 * PI * r * r))
    });
    let defect = consistency_check(&sol, &p, &f, &f0, 2.0, 8.0, &cfg(&[2.0])).unwrap_or(f64::NAN);
    s.check("divergence_theorem_defect", defect, Lt, 1e-4, &[]);
    let mass = annulus_integral(&f0, 2.0, 8.0, &cfg(&[2.0])).map_or(f64::NAN, |v| (v - Vec3::unit(2) * m).norm());
    s.check("annulus_mass", mass, Lt, 1e-6, &[]);

    SuiteOutput { section: s, timings: tm }
}

#[derive(Serialize)]
struct FluxSummary {
    preset: String,
    b: [f64; 3],
    b_norm: f64,
    expected_b: [f64; 3],
    spread: f64,
    warning: bool,
    consistency_defects: Vec<(f64, f64, f64)>,
    config: FluxConfig,
}

/// `flux` subcommand: per-radius fluxes, extracted `b` and annulus defects.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let preset = cfg.text("preset").to_string();
    let config = FluxConfig {
        radii: cfg.list("radii").to_vec(),
        period: cfg.float("period"),
        time_nodes: cfg.int("time_nodes"),
        sphere_theta: cfg.int("sphere_theta"),
        sphere_phi: cfg.int("sphere_phi"),
        ..Default::default()
    };
    config.validate()?;
    let sol = match preset.as_str() {
        "landau" => Landau::from_a(cfg.float("A"), Vec3::unit(2))?,
        _ => Landau::zero(),
    };
    let p = LandauPressure(sol);
    let (b, table) = extract_b(&sol, &p, &zero_t(), &config)?;
    let zero_f0 = Zero::<Vec3<f64>>::new();
    let mut radii = config.radii.clone();
    radii.sort_by(f64::total_cmp);
    let mut defects = Vec::new();
    for w in radii.windows(2) {
        defects.push((w[0], w[1], consistency_check(&sol, &p, &zero_t(), &zero_f0, w[0], w[1], &config)?));
    }

    let meta = [("preset", preset.clone()), ("b", format!("{:e},{:e},{:e}", b[0], b[1], b[2]))];
    let mut csv = CsvOut::create(&cfg.output_dir.join("flux.csv"), &meta, &["rho", "t", "I1", "I2", "I3"])?;
    for row in &table.rows {
        for (t, v) in &row.per_time {
            csv.row(&[row.rho, *t, v[0], v[1], v[2]])?;
        }
    }
    csv.finish()?;

    let summary = FluxSummary {
        preset,
        b: [b[0], b[1], b[2]],
        b_norm: b.norm(),
        expected_b: [sol.b[0], sol.b[1], sol.b[2]],
        spread: table.spread,
        warning: table.warning,
        consistency_defects: defects,
        config,
    };
    write_json(&cfg.output_dir.join("flux.json"), &summary)?;

    let mut s = Section::new("flux");
    let scale = sol.b.norm().max(1.0);
    s.constant("b_norm", b.norm());
    s.check("extracted_b", (b - sol.b).norm() / scale, Lt, 1e-3, &[3]);
    s.check("flux_spread", table.spread / scale, Lt, 1e-3, &[3]);
    let worst = summary.consistency_defects.iter().fold(0.0, |m, d| nan_max(m, d.2));
    s.check("divergence_theorem_defect", worst / scale, Lt, 1e-3, &[]);
    println!("b = ({:.10e}, {:.10e}, {:.10e})  |b| = {:.10e}  spread {:.3e}", b[0], b[1], b[2], b.norm(), table.spread);
    if table.warning {
        println!("warning: fluxes vary across radii by more than the spread threshold");
    }
    Ok(RunOutput { sections: vec![s], grid: None })
}
