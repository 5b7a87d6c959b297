//! Landau solutions: the `|b| <-> A` map, symmetry, and PDE residuals.

use std::f64::consts::PI;

use nsasym::fields::{fd_gradient, laplacian, xk_norm};
use nsasym::landau::{a_of_b, b_of_a, landau_residual, momentum_operator, Step};
use nsasym::quadrature::GaussLegendre;
use nsasym::{Grid, Landau, Mat3, Vec3};
use rand::Rng;

use super::{max_rel, nan_max, random_direction, rng, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{sci, CsvOut, Relation::*, Section};

/// `|b|` at `A = 2`.
pub const B_AT_A2: f64 = 34.766_840_318_785_725;

/// Closed form of `|b|(A)`, evaluated directly.
fn b_closed(a: f64) -> f64 {
    16.0 * PI * (a + 0.5 * a * a * ((a - 1.0) / (a + 1.0)).ln() + 4.0 * a / (3.0 * (a - 1.0) * (a + 1.0)))
}

/// `Delta U - (U . grad) U`, which equals `grad p` for a Landau pair.
fn pressure_force(sol: &Landau, x: Vec3<f64>) -> Option<Vec3<f64>> {
    let u = sol.eval_velocity(x).ok()?;
    let j = sol.velocity_gradient(x).ok()?;
    let lap = laplacian(sol, 0.0, x, 1e-5 * x.norm()).ok()?;
    Some(lap - (j.row(0) * u[0] + j.row(1) * u[1] + j.row(2) * u[2]))
}

fn line_integral(sol: &Landau, path: &[Vec3<f64>]) -> f64 {
    let gl = GaussLegendre::<f64>::new(24);
    let mut acc = 0.0;
    for seg in path.windows(2) {
        let d = seg[1] - seg[0];
        for (&s, &w) in gl.nodes.iter().zip(&gl.weights) {
            let y = seg[0] + d * (0.5 * (s + 1.0));
            acc += 0.5 * w * pressure_force(sol, y).map_or(f64::NAN, |f| f.dot(&d));
        }
    }
    acc
}

/// Grid of the residual criterion: 32 x 16 x 32 on `[0.5, 50]`.
pub fn residual_grid() -> Grid {
    Grid::new(0.5, 50.0, 32, 16, 32).expect("valid grid")
}

pub fn verify(seed: u64) -> SuiteOutput {
    let mut s = Section::new("landau");
    let mut tm = Timings::default();

    tm.time(1, || {
        let mut worst = 0.0f64;
        for a in [1.01f64, 1.1, 2.0, 5.0, 10.0, 100.0] {
            let back = b_of_a(a).and_then(|b| a_of_b(b, 1e-12));
            worst = nan_max(worst, back.map_or(f64::NAN, |v| (v / a - 1.0).abs()));
        }
        s.check("inversion_roundtrip", worst, Lt, 1e-8, &[1]);
    });

    let b2 = b_of_a(2.0).unwrap_or(f64::NAN);
    s.check("b_at_a2", (b2 - B_AT_A2).abs(), Lt, 1e-9, &[]);
    s.constant("b_at_a2", b2);

    let closed = max_rel([1.01, 1.1, 2.0, 5.0].iter().map(|&a| (b_of_a(a).unwrap_or(f64::NAN), b_closed(a))));
    s.check("b_matches_closed_form", closed, Lt, 1e-10, &[]);

    let vals: Vec<f64> = (0..50)
        .map(|i| {
            let l = 1.001f64.ln() + (1e4f64.ln() - 1.001f64.ln()) * i as f64 / 49.0;
            b_of_a(l.exp()).unwrap_or(f64::NAN)
        })
        .collect();
    let steepest = vals.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, nan_max);
    s.check("b_of_a_strictly_decreasing", steepest, Lt, 0.0, &[]);

    let mut r = rng(seed, 10);
    let sol = Landau::from_a(2.0, Vec3::new(1.0, -1.0, 0.5)).unwrap();
    let mut div = 0.0f64;
    for _ in 0..100 {
        let rad = 0.5 * 100f64.powf(r.gen::<f64>());
        let x = random_direction(&mut r) * rad;
        let d = fd_gradient(&sol, 0.0, x, 1e-4 * rad).map_or(f64::NAN, |g| g[0][0] + g[1][1] + g[2][2]);
        div = nan_max(div, d.abs() * rad * rad);
    }
    s.check("divergence_free_random", div, Lt, 1e-5, &[]);

    let mut hom = 0.0f64;
    let mut axi = 0.0f64;
    for _ in 0..20 {
        let x = random_direction(&mut r) * r.gen_range(0.1..10.0);
        let lam = r.gen_range(0.1..10.0);
        let u = sol.eval_velocity(x).unwrap();
        let v = sol.eval_velocity(x * lam).unwrap();
        hom = nan_max(hom, (v * lam - u).norm() / u.norm());
        let q = Mat3::rotation(sol.axis, r.gen_range(0.0..2.0 * PI));
        let a = sol.eval_velocity(q.apply(&x)).unwrap();
        axi = nan_max(axi, (a - q.apply(&u)).norm() / u.norm());
    }
    s.check("minus_one_homogeneous", hom, Lt, 1e-13, &[]);
    s.check("axisymmetric", axi, Lt, 1e-12, &[]);

    let grid = Grid::new(0.1, 100.0, 16, 16, 8).unwrap();
    let norms: Vec<f64> = [1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&b| {
            Landau::from_b(Vec3::new(0.0, 0.0, b))
                .and_then(|l| xk_norm(&l, 1.0, &grid))
                .unwrap_or(f64::NAN)
        })
        .collect();
    let growth = norms.windows(2).map(|p| p[0] / p[1]).fold(0.0, nan_max);
    s.check("x1_norm_shrinks_with_b", growth, Lt, 1.0, &[]);
    s.check("x1_norm_small_b", norms[0], Lt, 1e-3, &[]);

    let pg = Landau::from_a(2.0, Vec3::unit(2)).unwrap();
    let x = Vec3::new(1.0, 0.5, -0.3);
    let gp = fd_gradient(&pg.pressure(), 0.0, x, 1e-4).map(Vec3);
    let consistency = match (gp, pressure_force(&pg, x)) {
        (Ok(g), Some(f)) => (g - f).norm() / f.norm(),
        _ => f64::NAN,
    };
    s.check("pressure_gradient_consistency", consistency, Lt, 1e-5, &[]);
    let x0 = Vec3::new(5.0, 0.0, 0.0);
    let p1 = [x0, Vec3::new(5.0, 0.5, 0.0), Vec3::new(5.0, 0.5, -0.3), x];
    let p2 = [x0, Vec3::new(2.0, -2.0, 3.0), Vec3::new(1.0, 0.5, 2.0), x];
    let (i1, i2) = (line_integral(&pg, &p1), line_integral(&pg, &p2));
    let dp = pg.eval_pressure(x).unwrap() - pg.eval_pressure(x0).unwrap();
    s.check("pressure_path_independence", nan_max((i1 - i2).abs(), (i1 - dp).abs()), Lt, 1e-8, &[]);

    tm.time(2, || {
        let grid = residual_grid();
        match landau_residual(&pg, &grid, Step::Default) {
            Ok((m, d)) => {
                s.check("residual_momentum", m, Lt, 1e-4, &[2]);
                s.check("residual_divergence", d, Lt, 1e-4, &[2]);
            }
            Err(e) => {
                s.failed("residual_momentum", Lt, 1e-4, &[2], &e);
                s.failed("residual_divergence", Lt, 1e-4, &[2], &e);
            }
        }
        let coarse = landau_residual(&pg, &grid, Step::Relative(2e-2));
        let fine = landau_residual(&pg, &grid, Step::Relative(1e-2));
        let ratio = match (coarse, fine) {
            (Ok((a, _)), Ok((b, _))) => a / b,
            _ => f64::NAN,
        };
        s.constant("residual_step_ratio", ratio);
        s.check("residual_fd_order", (ratio - 4.0).abs(), Le, 0.5, &[2]);
    });

    SuiteOutput { section: s, timings: tm }
}

/// `landau` subcommand: samples and residuals on a grid, with `|b|` in the CSV header.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let a = cfg.float("A");
    let sol = Landau::from_a(a, Vec3::unit(2))?;
    let grid = Grid::new(cfg.float("r_min"), cfg.float("r_max"), cfg.int("n_r"), cfg.int("n_theta"), cfg.int("n_phi"))?;
    let b = b_of_a(a)?;
    let p = sol.pressure();
    let desc = grid.descriptor().to_text();

    let mut rows = Vec::new();
    let (mut mom_max, mut div_max) = (0.0f64, 0.0f64);
    for (x, _) in grid.nodes() {
        let r = x.norm();
        let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
        let phi = x[1].atan2(x[0]);
        let e_rho = x * (1.0 / r);
        let e_theta = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin());
        let u = sol.eval_velocity(x)?;
        let h = Step::<f64>::Default.at(&x);
        let m = momentum_operator(&sol, x, h)?;
        let gp = fd_gradient(&p, 0.0, x, h)?;
        let g = fd_gradient(&sol, 0.0, x, h)?;
        let mom = (m + Vec3(gp)).norm() * r * r * r;
        let div = (g[0][0] + g[1][1] + g[2][2]).abs() * r * r;
        mom_max = mom_max.max(mom);
        div_max = div_max.max(div);
        rows.push([r, theta, phi, u.dot(&e_rho), u.dot(&e_theta), sol.eval_pressure(x)?, mom, div]);
    }

    let meta = vec![
        ("|b|", sci(b)),
        ("A", sci(a)),
        ("axis", "0,0,1".to_string()),
        ("max_mom_residual", sci(mom_max)),
        ("max_div_residual", sci(div_max)),
        ("grid", desc.trim_end().replace('\n', "; ")),
    ];
    let header = ["r", "theta", "phi", "u_rho", "u_phi", "p", "mom_residual", "div_residual"];
    let mut csv = CsvOut::create(&cfg.output_dir.join("landau.csv"), &meta, &header)?;
    for row in &rows {
        csv.row(row)?;
    }
    csv.finish()?;

    let mut s = Section::new("landau");
    s.constant("b_norm", b);
    s.constant("A", a);
    s.check("residual_momentum", mom_max, Lt, 1e-4, &[2]);
    s.check("residual_divergence", div_max, Lt, 1e-4, &[2]);
    println!("|b| = {}  A = {}  max residuals: momentum {}  divergence {}", sci(b), sci(a), sci(mom_max), sci(div_max));
    Ok(RunOutput { sections: vec![s], grid: Some(desc) })
}
