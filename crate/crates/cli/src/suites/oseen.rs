//! Oseen tensor: closed form against quadrature, symmetry, trace, divergence,
//! scaling and empirical decay constants.

use serde::Serialize;

use nsasym::oseen::*;
use nsasym::{Mat3, Vec3};
use rand::Rng;

use super::{log_space, nan_max, rng, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{write_json, CsvOut, Relation::*, Section};

/// Ten `(t, x)` probes spanning short and long times, near and far points.
pub fn probes() -> Vec<(f64, Vec3<f64>)> {
    vec![
        (1.0, Vec3::new(1.0, 0.0, 0.0)),
        (0.25, Vec3::new(0.5, 0.5, 0.5)),
        (0.5, Vec3::new(1.0, 2.0, 3.0)),
        (2.0, Vec3::new(0.1, -0.2, 0.05)),
        (0.01, Vec3::new(0.3, 0.0, -0.1)),
        (4.0, Vec3::new(-3.0, 1.0, 2.0)),
        (1.0, Vec3::new(0.0, 0.0, 0.7)),
        (0.1, Vec3::new(0.2, 0.2, -0.2)),
        (10.0, Vec3::new(5.0, -5.0, 1.0)),
        (0.3, Vec3::new(-0.4, 0.9, 0.0)),
    ]
}

fn rel(a: &Mat3<f64>, b: &Mat3<f64>) -> f64 {
    (*a - *b).frobenius() / b.frobenius()
}

const DECAY_ORDERS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
const BOX: (f64, f64) = (1e-2, 1e2);

pub fn verify(seed: u64) -> SuiteOutput {
    let mut s = Section::new("oseen");
    let mut tm = Timings::default();

    tm.time(4, || {
        let closed = OseenTensor::new(OseenMode::ErfClosedForm);
        let brute = OseenTensor::new(OseenMode::BruteQuadrature);
        let mut worst = 0.0f64;
        let (mut sym, mut tr) = (0.0f64, 0.0f64);
        for (t, x) in probes() {
            let (Ok(a), Ok(b)) = (closed.eval(t, &x), brute.eval(t, &x)) else {
                worst = f64::NAN;
                continue;
            };
            worst = nan_max(worst, rel(&b, &a));
            sym = nan_max(sym, (a - a.transpose()).frobenius() / a.frobenius());
            let g = heat_kernel(t, &x).unwrap_or(f64::NAN);
            tr = nan_max(tr, (a.trace() - 2.0 * g).abs() / a.frobenius().max(g));
        }
        s.check("closed_form_vs_quadrature", worst, Lt, 1e-6, &[4]);
        s.check("symmetric", sym, Lt, 1e-10, &[4]);
        s.check("trace_identity", tr, Lt, 1e-10, &[4]);

        let mut div = 0.0f64;
        for &t in &log_grid(BOX.0, BOX.1, 20) {
            for &r in &log_grid(BOX.0, BOX.1, 20) {
                let x = Vec3::new(r, 0.3 * r, -0.5 * r);
                let d = column_divergence(t, &x).map_or(f64::NAN, |d| d.norm());
                div = nan_max(div, d * (x.norm() + t.sqrt()).powi(4));
            }
        }
        s.check("column_divergence", div, Lt, 1e-3, &[4]);

        let mut drift = 0.0f64;
        let mut finite = f64::INFINITY;
        for (l, k) in DECAY_ORDERS {
            match (decay_constant(l, k, 20, BOX, BOX), decay_constant(l, k, 40, BOX, BOX)) {
                (Ok(c), Ok(f)) => {
                    drift = nan_max(drift, (f.value - c.value).abs() / c.value);
                    finite = finite.min(if c.value.is_finite() { c.value } else { f64::NAN });
                    s.constant(&format!("decay_constant_l{l}_k{k}"), f.value);
                }
                _ => drift = f64::NAN,
            }
        }
        s.check("decay_constants_positive_finite", finite, Gt, 0.0, &[4]);
        s.check("decay_constants_stable", drift, Lt, 0.05, &[4]);
    });

    let mut r = rng(seed, 20);
    let mut scaling = 0.0f64;
    for _ in 0..20 {
        let t = 10f64.powf(r.gen_range(-2.0..2.0));
        let x = Vec3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let e = match (oseen_eval(4.0 * t, &(x * 2.0)), oseen_eval(t, &x)) {
            (Ok(a), Ok(b)) => rel(&a, &(b * 0.125)),
            _ => f64::NAN,
        };
        scaling = nan_max(scaling, e);
    }
    s.check("parabolic_scaling", scaling, Lt, 1e-10, &[]);

    SuiteOutput { section: s, timings: tm }
}

#[derive(Serialize)]
struct KernelSummary {
    t_range: (f64, f64),
    r_range: (f64, f64),
    n: usize,
    decay_constants: Vec<DecayConstant>,
    refined_decay_constants: Vec<DecayConstant>,
    max_relative_drift: f64,
}

/// `kernel` subcommand: tensor samples along a ray and decay constants.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let t_range = (cfg.float("t_min"), cfg.float("t_max"));
    let r_range = (cfg.float("r_min"), cfg.float("r_max"));
    let n = cfg.int("n");
    if !(t_range.0 > 0.0 && t_range.1 > t_range.0 && r_range.0 > 0.0 && r_range.1 > r_range.0 && n >= 2) {
        return Err("kernel needs 0 < t_min < t_max, 0 < r_min < r_max and n >= 2".into());
    }
    let dir = Vec3::new(1.0, 0.3, -0.5).normalized().expect("nonzero");
    let mut header = vec!["t", "x1", "x2", "x3"];
    let names: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| format!("S{}{}", i + 1, j + 1))).collect();
    header.extend(names.iter().map(String::as_str));
    header.extend(["w00", "w10", "w01", "w11"]);
    let meta = [("direction", format!("{:e},{:e},{:e}", dir[0], dir[1], dir[2]))];
    let mut csv = CsvOut::create(&cfg.output_dir.join("kernel.csv"), &meta, &header)?;
    for &t in &log_space(t_range.0, t_range.1, n) {
        for &r in &log_space(r_range.0, r_range.1, n) {
            let x = dir * r;
            let m = oseen_eval(t, &x)?;
            let mut row = vec![t, x[0], x[1], x[2]];
            row.extend(m.0.iter().flatten());
            for (l, k) in DECAY_ORDERS {
                row.push(weighted_derivative(l, k, t, r)?);
            }
            csv.row(&row)?;
        }
    }
    csv.finish()?;

    let mut s = Section::new("oseen");
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    let mut drift = 0.0f64;
    for (l, k) in DECAY_ORDERS {
        let c = decay_constant(l, k, n, t_range, r_range)?;
        let f = decay_constant(l, k, 2 * n, t_range, r_range)?;
        drift = nan_max(drift, (f.value - c.value).abs() / c.value);
        s.constant(&format!("decay_constant_l{l}_k{k}"), f.value);
        coarse.push(c);
        fine.push(f);
    }
    s.check("decay_constants_stable", drift, Lt, 0.05, &[4]);
    let summary = KernelSummary {
        t_range,
        r_range,
        n,
        decay_constants: coarse,
        refined_decay_constants: fine,
        max_relative_drift: drift,
    };
    write_json(&cfg.output_dir.join("kernel.json"), &summary)?;
    for c in &summary.refined_decay_constants {
        println!("C(l={}, k={}) = {:.6e}", c.l, c.k, c.value);
    }
    Ok(RunOutput { sections: vec![s], grid: None })
}
