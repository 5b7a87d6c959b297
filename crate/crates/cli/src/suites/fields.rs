//! Grid, quadrature and finite-difference invariants.

use std::f64::consts::PI;
use std::sync::Arc;

use nsasym::fields::*;
use nsasym::{Grid, Landau, Mat3, Vec3};
use rand::Rng;

use super::{nan_max, rng, SuiteOutput, Timings};
use crate::report::{Relation::*, Section};

pub fn verify(seed: u64) -> SuiteOutput {
    let mut s = Section::new("fields");

    let mut worst = 0.0f64;
    for n in [8, 9, 12, 16, 24, 32, 48, 64] {
        for m in [1, 7, 16, 64] {
            match SphereRule::<f64>::new(n, m) {
                Ok(r) => worst = nan_max(worst, (r.weight_sum() / (4.0 * PI) - 1.0).abs()),
                Err(_) => worst = f64::NAN,
            }
        }
    }
    s.check("sphere_weights_sum_4pi", worst, Lt, 1e-12, &[]);

    let g = Grid::default_grid();
    let min_step = g.radii.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    s.check("radii_strictly_increasing", min_step, Gt, 0.0, &[]);
    s.check("r_min_positive", g.r_min, Gt, 0.0, &[]);
    let rejected = [Grid::new(0.0, 1.0, 4, 2, 2).is_err(), Grid::new(-1.0, 1.0, 4, 2, 2).is_err()];
    s.check("nonpositive_r_min_rejected", rejected.iter().filter(|r| !**r).count() as f64, Le, 0.0, &[]);

    let sol = Landau::from_a(1.5, Vec3::new(0.2, 0.1, 1.0)).unwrap();
    let coarse = Grid::new(0.1, 100.0, 9, 4, 8).unwrap();
    let fine = Grid::new(0.1, 100.0, 17, 4, 24).unwrap();
    let growth = match (xk_norm(&sol, 1.0, &coarse), xk_norm(&sol, 1.0, &fine)) {
        (Ok(a), Ok(b)) => b - a,
        _ => f64::NAN,
    };
    s.check("xk_monotone_under_refinement", growth, Ge, 0.0, &[]);

    let sol2 = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    match norm_report(&sol2, 1.0, 3.0, &Grid::new(0.5, 20.0, 8, 4, 8).unwrap()) {
        Ok(r) => {
            let v = r.xk_value.min(r.weak_lq_value);
            let v = if r.xk_value.is_finite() && r.weak_lq_value.is_finite() { v } else { f64::NAN };
            s.check("norm_report_finite_nonnegative", v, Ge, 0.0, &[]);
            s.constant("landau_a2_x1_norm_8x4x8", r.xk_value);
            s.constant("landau_a2_weak_l3_norm_8x4x8", r.weak_lq_value);
        }
        Err(e) => s.failed("norm_report_finite_nonnegative", Ge, 0.0, &[], e),
    }

    s.check("fd_order_h2", fd_order_deviation(), Le, 0.5, &[]);

    // purity: repeated evaluation is bit-identical
    let mut r = rng(seed, 1);
    let h: FieldHandle<f64, Vec3<f64>> = Arc::new(Landau::from_a(1.3, Vec3::new(1.0, 2.0, -0.5)).unwrap());
    let mut mismatches = 0usize;
    for _ in 0..50 {
        let x = Vec3::new(r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0));
        let t = r.gen_range(0.0..3.0);
        let (a, b) = (h.eval(t, x), h.eval(t, x));
        if a.components().iter().zip(b.components()).any(|(p, q)| p.to_bits() != q.to_bits()) {
            mismatches += 1;
        }
    }
    let pg = Grid::new(0.2, 30.0, 10, 6, 8).unwrap();
    match (xk_norm(&*h, 1.0, &pg), xk_norm(&*h, 1.0, &pg)) {
        (Ok(a), Ok(b)) if a.to_bits() == b.to_bits() => {}
        _ => mismatches += 1,
    }
    s.check("evaluation_is_pure", mismatches as f64, Le, 0.0, &[]);

    let x = Vec3::new(0.3, 0.1, 2.0);
    let v3 = h.eval(0.0, x).components().len();
    let m: Mat3<f64> = Mat3::identity();
    let t9 = m.components().len();
    let arity_defect = (v3 as f64 - 3.0).abs() + (t9 as f64 - 9.0).abs();
    let arity_ok = h.arity() == Arity::Vector3 && <Mat3<f64> as FieldValue<f64>>::ARITY == Arity::Tensor3x3;
    s.check("value_arity_components", if arity_ok { arity_defect } else { f64::NAN }, Le, 0.0, &[]);

    SuiteOutput { section: s, timings: Timings::default() }
}

/// Worst `|ratio - 4|` of FD errors at steps `h`, `h/2` for gradient and Laplacian
/// of a polynomial times a Gaussian.
fn fd_order_deviation() -> f64 {
    let f = space_fn(|x: Vec3<f64>| (1.0 + x[0] * x[1] - x[2] * x[2] * x[2]) * (-x.norm2()).exp());
    let dfdx = |x: Vec3<f64>| {
        let e = (-x.norm2()).exp();
        let p = 1.0 + x[0] * x[1] - x[2] * x[2] * x[2];
        (x[1] - 2.0 * x[0] * p) * e
    };
    let lap = |x: Vec3<f64>| {
        let e = (-x.norm2()).exp();
        let p = 1.0 + x[0] * x[1] - x[2] * x[2] * x[2];
        let dp = Vec3::new(x[1], x[0], -3.0 * x[2] * x[2]);
        let ge = x * (-2.0 * e);
        let le = (4.0 * x.norm2() - 6.0) * e;
        -6.0 * x[2] * e + 2.0 * dp.dot(&ge) + p * le
    };
    let mut worst = 0.0f64;
    for x in [Vec3::new(0.3, -0.5, 0.4), Vec3::new(-0.6, 0.2, 0.1)] {
        for h in [1e-2, 2e-2] {
            let (Ok(g1), Ok(g2), Ok(l1), Ok(l2)) = (
                fd_gradient(&f, 0.0, x, h),
                fd_gradient(&f, 0.0, x, h / 2.0),
                fd_laplacian(&f, 0.0, x, h),
                fd_laplacian(&f, 0.0, x, h / 2.0),
            ) else {
                return f64::NAN;
            };
            let rg = (g1[0] - dfdx(x)).abs() / (g2[0] - dfdx(x)).abs();
            let rl = (l1 - lap(x)).abs() / (l2 - lap(x)).abs();
            worst = nan_max(worst, nan_max((rg - 4.0).abs(), (rl - 4.0).abs()));
        }
    }
    worst
}
