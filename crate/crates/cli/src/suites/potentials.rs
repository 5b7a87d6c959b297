//! Space-time potentials: weighted decay, linearity, quadrature convergence and
//! the two-sided convolution estimate.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use nsasym::fields::space_time_fn;
use nsasym::potentials::*;
use nsasym::{FieldHandle, Mat3, Vec3};

use super::{log_space, nan_max, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{write_json, CsvOut, Relation::*, Section};

/// Smooth radial bump supported in `|y| <= 1`, maximum 1.
fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

fn vec_source(f: impl Fn(f64, Vec3<f64>) -> Vec3<f64> + Send + Sync + 'static) -> FieldHandle<f64, Vec3<f64>> {
    Arc::new(space_time_fn(f))
}

fn mat_source(f: impl Fn(f64, Vec3<f64>) -> Mat3<f64> + Send + Sync + 'static) -> FieldHandle<f64, Mat3<f64>> {
    Arc::new(space_time_fn(f))
}

/// Steady bump force along `e_3`.
fn steady_bump() -> Source<f64, Vec3<f64>> {
    Source::new(vec_source(|_, y| Vec3::unit(2) * bump(y.norm())), TimeProfile::Steady, Envelope::new(1.0, 0.0))
        .with_support(1.0)
}

/// Time-periodic bump `(mean + sin 2 pi t) / (1 + mean)` along `e_3`.
fn periodic_bump(mean: f64) -> Source<f64, Vec3<f64>> {
    Source::new(
        vec_source(move |t, y| Vec3::unit(2) * ((mean + (2.0 * PI * t).sin()) * bump(y.norm()) / (1.0 + mean))),
        TimeProfile::Periodic { period: 1.0 },
        Envelope::new(1.0, 0.0),
    )
    .with_support(1.0)
}

/// Symmetric tensor source `m (1 + |y|^2)^{-5/4}`.
fn theta_source() -> Source<f64, Mat3<f64>> {
    let m = (Vec3::unit(0).outer(&Vec3::unit(2)) + Vec3::unit(2).outer(&Vec3::unit(0))) * (1.0 / 2f64.sqrt());
    Source::new(
        mat_source(move |_, y| m * (1.0 + y.norm2()).powf(-1.25)),
        TimeProfile::Steady,
        Envelope::new(1.0, 2.5),
    )
}

/// Weight exponent for `|Theta G| <x>^alpha` with the source above.
const THETA_ALPHA: f64 = 1.5;
const DIRECTION: [f64; 3] = [0.6, 0.0, 0.8];

/// `max(last third) / max(first two thirds)`: below 1.5 means no growth across the window.
fn tail_ratio(w: &[f64]) -> f64 {
    let cut = (2 * w.len()) / 3;
    let head = w[..cut].iter().copied().fold(0.0, nan_max);
    let tail = w[cut..].iter().copied().fold(0.0, nan_max);
    tail / head
}

/// The four parameter cases of the convolution estimate, each with `lambda in {0, 1}`.
pub fn int_est_cases(eta: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for (b, c) in [(1.0, 0.0), (2.0, 0.0), (0.0, 1.0 + eta), (0.0, 2.0 + eta)] {
        for lambda in [0.0, 1.0] {
            out.push((b, c, lambda));
        }
    }
    out
}

fn int_est_points() -> Vec<Vec3<f64>> {
    log_space(0.01, 100.0, 30).into_iter().map(|r| Vec3::new(0.0, 0.0, r)).collect()
}

/// Weighted magnitudes `|value| w(|x|)` along a ray.
fn weighted_lambda(g: &Source<f64, Vec3<f64>>, t: f64, radii: &[f64], power: i32) -> Vec<f64> {
    let dir = Vec3(DIRECTION);
    let spec = PotentialQuadratureSpec::default();
    radii
        .iter()
        .map(|&r| lambda_apply(g, t, &(dir * r), &spec).map_or(f64::NAN, |v| v.value.norm() * r.powi(power)))
        .collect()
}

fn weighted_theta(t: f64, radii: &[f64]) -> Vec<f64> {
    let dir = Vec3(DIRECTION);
    let g = theta_source();
    let spec = PotentialQuadratureSpec::default();
    radii
        .iter()
        .map(|&r| {
            theta_apply(&g, t, &(dir * r), &spec)
                .map_or(f64::NAN, |v| v.value.norm() * (1.0 + r * r).powf(THETA_ALPHA / 2.0))
        })
        .collect()
}

pub fn verify(_seed: u64) -> SuiteOutput {
    let mut s = Section::new("potentials");
    let mut tm = Timings::default();
    let spec = PotentialQuadratureSpec::default();

    let nodes = spec.time_nodes::<f64>(101.0);
    let bad_nodes = nodes.iter().filter(|(t, _)| !(*t > 0.0)).count() + nodes.windows(2).filter(|p| p[1].0 <= p[0].0).count();
    s.check("time_nodes_positive_increasing", bad_nodes as f64, Le, 0.0, &[]);
    let mut low = spec.clone();
    low.radial_order = 3;
    let order_defects = spec.validate().is_err() as usize + low.validate().is_ok() as usize;
    s.check("orders_at_least_4", order_defects as f64, Le, 0.0, &[]);
    let bc_defects = IntEstParams::new(2.0, 1.0, 1.0, 0.0, 1.0).is_ok() as usize
        + IntEstParams::new(2.0, 0.5, 1.0, 0.0, 1.0).is_err() as usize;
    s.check("int_est_b_plus_c_below_n", bc_defects as f64, Le, 0.0, &[]);

    // linearity of Theta
    let m1 = Vec3::unit(0).outer(&Vec3::unit(1));
    let m2 = Vec3::unit(2).outer(&Vec3::unit(2));
    let f1 = move |y: Vec3<f64>| m1 * (1.0 + y.norm2()).powf(-1.5);
    let f2 = move |y: Vec3<f64>| m2 * (1.0 + (y - Vec3::new(0.5, 0.0, 0.0)).norm2()).powf(-2.0);
    let g1 = Source::new(mat_source(move |_, y| f1(y)), TimeProfile::Steady, Envelope::new(1.0, 3.0));
    let g2 = Source::new(mat_source(move |_, y| f2(y)), TimeProfile::Steady, Envelope::new(1.0, 4.0).centered([0.5, 0.0, 0.0]));
    let g3 = Source::new(mat_source(move |_, y| f1(y) + f2(y) * 2.0), TimeProfile::Steady, Envelope::new(5.0, 3.0));
    let mut lin = 0.0f64;
    for x in [Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, -2.0, 4.0), Vec3::new(7.0, 0.5, 0.5)] {
        let e = match (theta_apply(&g1, 1.0, &x, &spec), theta_apply(&g2, 1.0, &x, &spec), theta_apply(&g3, 1.0, &x, &spec)) {
            (Ok(a), Ok(b), Ok(c)) => (c.value - (a.value + b.value * 2.0)).norm() / c.value.norm(),
            _ => f64::NAN,
        };
        lin = nan_max(lin, e);
    }
    s.check("theta_linear", lin, Lt, 1e-4, &[]);

    // doubling the orders moves the value by less than 10x the estimate
    let g = theta_source();
    let mut conv = 0.0f64;
    for x in [Vec3::new(0.7, 0.0, 0.2), Vec3::new(5.0, 5.0, -1.0), Vec3::new(-2.0, 1.0, 3.0)] {
        let e = match (theta_apply(&g, 1.0, &x, &spec), theta_apply(&g, 1.0, &x, &spec.scaled(2.0))) {
            (Ok(a), Ok(b)) => (a.value - b.value).norm() / (10.0 * a.error_estimate),
            _ => f64::NAN,
        };
        conv = nan_max(conv, e);
    }
    s.check("quadrature_convergence", conv, Lt, 1.0, &[]);

    tm.time(5, || {
        let radii = log_space(2.0, 50.0, 6);
        let theta = weighted_theta(1.0, &radii);
        let lam = weighted_lambda(&steady_bump(), 1.0, &radii, 1);
        let zero_mean = weighted_lambda(&periodic_bump(0.0), 0.25, &radii, 2);
        let with_mean = weighted_lambda(&periodic_bump(1.0), 0.25, &radii, 2);
        s.constant("theta_weighted_constant", theta.iter().copied().fold(0.0, nan_max));
        s.constant("lambda_x_constant", lam.iter().copied().fold(0.0, nan_max));
        s.constant("zero_mean_x2_constant", zero_mean.iter().copied().fold(0.0, nan_max));
        s.check("theta_weighted_bounded", tail_ratio(&theta), Lt, 1.5, &[5]);
        s.check("lambda_x_weighted_bounded", tail_ratio(&lam), Lt, 1.5, &[5]);
        s.check("zero_mean_x2_weighted_bounded", tail_ratio(&zero_mean), Lt, 1.5, &[5]);
        s.check("nonzero_mean_x2_weighted_grows", with_mean[with_mean.len() - 1] / with_mean[0], Gt, 3.0, &[5]);
    });

    tm.time(6, || {
        let xs = int_est_points();
        let mut worst = 0.0f64;
        for (b, c, lambda) in int_est_cases(0.25) {
            let r = IntEstParams::new(b, c, 1.0, lambda, 1.0).and_then(|p| int_est_ratio(&p, &xs));
            let dev = r.map_or(f64::NAN, |(lo, hi)| nan_max(lo.log10().abs(), hi.log10().abs()));
            worst = nan_max(worst, dev);
        }
        s.check("int_est_two_sided", worst, Lt, 2.0, &[6]);

        let mut ident = 0.0f64;
        for (b, c) in [(1.0, 0.0), (2.0, 0.0), (0.0, 1.25), (0.0, 2.25)] {
            for r in [0.3, 3.0, 30.0] {
                let x = Vec3::new(r, 0.0, 0.0);
                // the ratio J / model depends only on x / sqrt t and lambda / sqrt t
                let e = IntEstParams::new(b, c, 1.0, 2.0, 4.0)
                    .and_then(|p4| int_est_ratio(&p4, &[x]))
                    .and_then(|(a, _)| {
                        let p1 = IntEstParams::new(b, c, 1.0, 1.0, 1.0)?;
                        Ok((a, int_est_ratio(&p1, &[x * 0.5])?.0))
                    })
                    .map_or(f64::NAN, |(a, bb)| (a - bb).abs() / bb);
                ident = nan_max(ident, e);
            }
        }
        s.check("int_est_scaling_identity", ident, Lt, 1e-6, &[6]);
    });

    SuiteOutput { section: s, timings: tm }
}

#[derive(Serialize)]
struct IntEstRow {
    b: f64,
    c: f64,
    lambda: f64,
    min_ratio: f64,
    max_ratio: f64,
}

/// `potentials` subcommand: weighted magnitudes along a ray for one case.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let (r_min, r_max, n, t, eta) = (cfg.float("r_min"), cfg.float("r_max"), cfg.int("n"), cfg.float("t"), cfg.float("eta"));
    if !(r_min > 0.0 && r_max > r_min && n >= 2 && t > 0.0) {
        return Err("potentials needs 0 < r_min < r_max, n >= 2 and t > 0".into());
    }
    let radii = log_space(r_min, r_max, n);
    let case = cfg.text("case").to_string();
    let mut s = Section::new("potentials");
    let path = cfg.output_dir.join(format!("potentials_{case}.csv"));
    match case.as_str() {
        "theta" => {
            let w = weighted_theta(t, &radii);
            let meta = [("weight", format!("<x>^{THETA_ALPHA}")), ("t", format!("{t:e}"))];
            let mut csv = CsvOut::create(&path, &meta, &["r", "weighted_theta"])?;
            for (r, v) in radii.iter().zip(&w) {
                csv.row(&[*r, *v])?;
            }
            csv.finish()?;
            s.constant("theta_weighted_constant", w.iter().copied().fold(0.0, nan_max));
            s.check("theta_weighted_bounded", tail_ratio(&w), Lt, 1.5, &[5]);
        }
        "lambda" => {
            let lam = weighted_lambda(&steady_bump(), t, &radii, 1);
            let zero = weighted_lambda(&periodic_bump(0.0), t, &radii, 2);
            let mean = weighted_lambda(&periodic_bump(1.0), t, &radii, 2);
            let meta = [("t", format!("{t:e}"))];
            let header = ["r", "steady_x1", "zero_mean_x2", "nonzero_mean_x2"];
            let mut csv = CsvOut::create(&path, &meta, &header)?;
            for i in 0..radii.len() {
                csv.row(&[radii[i], lam[i], zero[i], mean[i]])?;
            }
            csv.finish()?;
            s.constant("lambda_x_constant", lam.iter().copied().fold(0.0, nan_max));
            s.constant("zero_mean_x2_constant", zero.iter().copied().fold(0.0, nan_max));
            s.constant("nonzero_mean_x2_growth", mean[mean.len() - 1] / mean[0]);
            s.check("lambda_x_weighted_bounded", tail_ratio(&lam), Lt, 1.5, &[5]);
            s.check("zero_mean_x2_weighted_bounded", tail_ratio(&zero), Lt, 1.5, &[5]);
        }
        _ => {
            let header = ["r", "b", "c", "lambda", "ratio"];
            let mut csv = CsvOut::create(&path, &[("eta", format!("{eta:e}")), ("t", format!("{t:e}"))], &header)?;
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for (b, c, lambda) in int_est_cases(eta) {
                let p = IntEstParams::new(b, c, 1.0, lambda, t)?;
                let mut lo = f64::INFINITY;
                let mut hi = 0.0f64;
                for &r in &radii {
                    let (q, _) = int_est_ratio(&p, &[Vec3::new(0.0, 0.0, r)])?;
                    csv.row(&[r, b, c, lambda, q])?;
                    lo = lo.min(q);
                    hi = hi.max(q);
                }
                worst = nan_max(worst, nan_max(lo.log10().abs(), hi.log10().abs()));
                rows.push(IntEstRow { b, c, lambda, min_ratio: lo, max_ratio: hi });
            }
            csv.finish()?;
            write_json(&cfg.output_dir.join("potentials_intest.json"), &rows)?;
            s.check("int_est_two_sided", worst, Lt, 2.0, &[6]);
        }
    }
    for (k, v) in &s.constants {
        println!("{k} = {v:.6e}");
    }
    Ok(RunOutput { sections: vec![s], grid: None })
}
