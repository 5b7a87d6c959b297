//! Picard solver for the perturbed system: contraction, smallness scaling,
//! self-similarity of the fixed point and the logarithmic obstruction.

use serde::Serialize;

use nsasym::fields::divergence;
use nsasym::perturbed::*;
use nsasym::{FieldHandle, Vec3};
use rand::Rng;

use super::{nan_max, rng, RunError, RunOutput, SuiteOutput, Timings};
use crate::config::ExperimentConfig;
use crate::report::{write_json, CsvOut, Relation::*, Section};

const ETA: f64 = 0.25;
const TOL: f64 = 1e-7;
const EPS_LADDER: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// Fast-path grid of the acceptance run: one slice, 12 x 9 nodes on `xi in [0.05, 20]`.
pub fn fast_grid() -> PicardGrid {
    PicardGrid::self_similar(12, 9, 0.05, 20.0)
}

/// Several time slices on a coarser meridian grid, for the general path.
fn general_grid(times: &[f64]) -> PicardGrid {
    PicardGrid { times: times.to_vec(), xi_min: 0.05, xi_max: 20.0, n_xi: 8, n_theta: 6, n_phi: 1 }
}

/// Fifty points in the `x1 x3` half-plane with `|x|` geometric in `[0.1, 3]`.
pub fn probe_points() -> Vec<Vec3<f64>> {
    (0..50)
        .map(|i| {
            let r = 0.1 * 30f64.powf(i as f64 / 49.0);
            let th = 0.3 + 0.05 * i as f64;
            Vec3::new(r * th.sin(), 0.0, r * th.cos())
        })
        .collect()
}

fn opts(tol: f64) -> PicardOptions {
    PicardOptions { tol, ..Default::default() }
}

/// Worst `|div w| (|x| + sqrt t)^{1-eta} |x|^{1+eta}` over random space-time samples.
fn weighted_divergence(w: &FieldHandle<f64, Vec3<f64>>, seed: u64, times: &[f64], n: usize) -> f64 {
    let mut r = rng(seed, 50);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let t = times[r.gen_range(0..times.len())];
        let rad = t.sqrt() * 10f64.powf(r.gen_range(-0.5..0.7));
        let x = super::random_direction(&mut r) * rad;
        let d = divergence(w.as_ref(), t, x, 1e-3 * rad).map_or(f64::NAN, f64::abs);
        worst = nan_max(worst, d * y2_gradient_weight(t, &x, ETA));
    }
    worst
}

/// Largest `eps = 0.1 2^{-k}` whose Picard run on a small grid keeps every
/// contraction factor below 0.9.
fn eps_max() -> f64 {
    let grid = PicardGrid::self_similar(6, 4, 0.1, 10.0);
    for k in 0..8 {
        let eps = 0.1 * 2f64.powi(-k);
        let Ok(p) = preset_problem(Preset::SelfSimilar, eps, ETA) else { continue };
        if let Ok((st, _)) = picard_solve(&p, &grid, &opts(1e-10)) {
            if st.contraction_factors.iter().all(|f| *f < 0.9) {
                return eps;
            }
        }
    }
    f64::NAN
}

fn fail_all(s: &mut Section, names: &[&str], e: &dyn std::fmt::Display) {
    for name in names {
        s.failed(name, Lt, 0.0, &[9], e.to_string());
    }
}

pub fn verify(seed: u64) -> SuiteOutput {
    let mut s = Section::new("perturbed");
    let mut tm = Timings::default();
    let pts = probe_points();

    tm.time(9, || {
        let mut fast = Vec::new();
        for eps in EPS_LADDER {
            let res = preset_problem(Preset::SelfSimilar, eps, ETA).and_then(|p| {
                let (st, w) = picard_solve(&p, &fast_grid(), &opts(TOL))?;
                Ok((p, st, w))
            });
            match res {
                Ok(r) => fast.push(r),
                Err(e) => {
                    fail_all(&mut s, &["picard_fast_path"], &e);
                    return;
                }
            }
        }
        let (p, st, w) = &fast[0];
        let y1 = *st.y1_norms.last().unwrap_or(&f64::NAN);
        s.constant("linear_constant", st.linear_constant);
        s.constant("y1_norm", y1);
        s.constant("iterations", st.iterations as f64);
        s.constant("grid_nodes", st.grid_nodes as f64);
        s.constant("bilinear_constant", st.distances[0] / (p.eps * st.y1_norms[0]));
        let worst_factor = st.contraction_factors.iter().fold(0.0, |m, f| nan_max(m, *f));
        s.check("contraction_factor", worst_factor, Lt, 0.5, &[9]);
        s.check("converged_iterations", if st.converged { st.iterations as f64 } else { f64::NAN }, Le, 30.0, &[9]);
        s.check("y1_norm_bound", y1 / (2.0 * st.linear_constant * p.eps), Le, 1.0, &[9]);
        s.check("fixed_point_residual", st.residual, Lt, 2.0 * TOL, &[9]);
        let recorded = (st.contraction_factors.len() + 1) as f64 - st.distances.len() as f64;
        s.check("contraction_factors_recorded", recorded.abs(), Le, 0.0, &[9]);
        s.check("certificate_within_eps", p.certificate / p.eps, Le, 1.0, &[]);
        s.check("divergence_free", weighted_divergence(w, seed, &[0.5, 1.0, 2.0], 50), Lt, 1e-4, &[9]);

        let ratios: Vec<f64> = fast
            .windows(2)
            .map(|q| q[0].1.y1_norms.last().unwrap_or(&f64::NAN) / q[1].1.y1_norms.last().unwrap_or(&f64::NAN))
            .collect();
        let spread = ratios.iter().fold(0.0, |m, q| nan_max(m, (q - 2.0).abs()));
        s.check("smallness_scaling", spread, Le, 0.2, &[9]);
        let increases = fast.windows(2).filter(|q| q[1].1.iterations > q[0].1.iterations).count();
        s.check("iterations_nonincreasing_in_eps", increases as f64, Le, 0.0, &[9]);

        let dev = check_self_similarity(&**w, 2.0, &[0.5, 1.0], &pts, ETA);
        s.check("fast_path_self_similarity", dev, Lt, 10.0 * TOL, &[9]);
        let prof = self_similar_profile(w.clone(), &[1.0], &pts, ETA);
        s.check("profile_is_unit_time_slice", prof.deviation_metrics[0].1, Le, 0.0, &[]);

        match preset_problem(Preset::SelfSimilar, EPS_LADDER[0], ETA)
            .and_then(|p| picard_solve(&p, &general_grid(&[0.5, 1.0, 2.0, 4.0]), &opts(TOL)))
        {
            Ok((gs, gw)) => {
                s.check("general_path_self_similarity", check_self_similarity(&*gw, 2.0, &[0.5, 1.0], &pts, ETA), Lt, 10.0 * TOL, &[9]);
                s.check("general_path_contraction", gs.contraction_factors.iter().fold(0.0, |m, f| nan_max(m, *f)), Lt, 0.5, &[9]);
                let mut diff = 0.0f64;
                for x in &pts {
                    diff = nan_max(diff, (gw.eval(1.0, *x) - w.eval(1.0, *x)).norm() * y1_weight(1.0, x, ETA));
                }
                s.check("fast_vs_general_path", diff / y1, Lt, 0.05, &[]);
            }
            Err(e) => fail_all(&mut s, &["general_path_self_similarity", "general_path_contraction"], &e),
        }

        match preset_problem(Preset::DiscretelySelfSimilar, EPS_LADDER[0], ETA)
            .and_then(|p| picard_solve(&p, &general_grid(&[0.5, 1.0, 2.0, 4.5]), &opts(TOL)))
        {
            Ok((_, dw)) => {
                let d2 = check_self_similarity(&*dw, 2.0, &[0.5, 1.0], &pts, ETA);
                let d3 = check_self_similarity(&*dw, 3.0, &[0.5], &pts, ETA);
                s.constant("dss_deviation_lambda2", d2);
                s.constant("dss_deviation_lambda3", d3);
                s.check("dss_contrast", d3 / d2, Gt, 5.0, &[9]);
            }
            Err(e) => fail_all(&mut s, &["dss_contrast"], &e),
        }

        match preset_problem(Preset::SelfSimilar, EPS_LADDER[0], ETA).and_then(|p| log_correction_witness(&p, 1.0, &[2, 3, 4, 5, 6])) {
            Ok(lw) => {
                s.check("log_witness_monotone", if lw.monotone { 0.0 } else { 1.0 }, Le, 0.0, &[9]);
                s.constant("log_witness_slope", lw.slope);
            }
            Err(e) => fail_all(&mut s, &["log_witness_monotone"], &e),
        }
    });

    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in [1, 2] {
        for i in 0..20 {
            let t = [0.25, 1.0, 4.0, 16.0][i % 4];
            let r = 10f64.powf(-2.0 + 4.0 * i as f64 / 19.0);
            let q = wn_kernel_integral(r, t, ETA, k) / wn_kernel_bound(r, t, ETA, k);
            lo = if q.is_nan() { f64::NAN } else { lo.min(q) };
            hi = nan_max(hi, q);
        }
    }
    s.constant("kernel_bound_ratio_min", lo);
    s.constant("kernel_bound_ratio_max", hi);
    s.check("kernel_bound_ratio_lower", lo, Gt, 0.01, &[]);
    s.check("kernel_bound_ratio_upper", hi, Lt, 100.0, &[]);

    s.constant("eps_max", eps_max());

    SuiteOutput { section: s, timings: tm }
}

#[derive(Serialize)]
struct PicardReport<'a> {
    preset: &'a str,
    eps: f64,
    eta: f64,
    certificate: f64,
    self_similar: bool,
    axisymmetric: bool,
    grid: &'a PicardGrid,
    tol: f64,
    state: &'a PicardState<f64>,
    deviation_lambda2: f64,
    deviation_lambda3: f64,
    profile_deviations: Vec<(f64, f64)>,
}

fn build_problem(cfg: &ExperimentConfig) -> Result<PerturbedProblem<f64>, RunError> {
    let (eps, eta) = (cfg.float("eps"), cfg.float("eta"));
    Ok(match cfg.text("preset") {
        "ss" => preset_problem(Preset::SelfSimilar, eps, eta)?,
        "dss" => preset_problem(Preset::DiscretelySelfSimilar, eps, eta)?,
        _ => {
            let u = landau_background(cfg.float("landau_norm"))?;
            let m = cfg.float("modulation");
            let p = PerturbedProblem::new(u.clone(), u, swirl_data(cfg.float("swirl"), m), eta, eps)?;
            if m == 0.0 {
                p.assert_self_similar()?
            } else {
                p
            }
        }
    })
}

/// `picard` subcommand: solve, then write diagnostics and the field on the grid nodes.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let problem = build_problem(cfg)?;
    let grid = PicardGrid {
        times: cfg.list("times").to_vec(),
        xi_min: cfg.float("xi_min"),
        xi_max: cfg.float("xi_max"),
        n_xi: cfg.int("n_xi"),
        n_theta: cfg.int("n_theta"),
        n_phi: cfg.int("n_phi"),
    };
    if grid.times.len() == 1 && !problem.self_similar {
        return Err("data are not self-similar: pass several --times, e.g. --times 0.5,1,2,4.5".into());
    }
    let tol = cfg.float("tol");
    let o = PicardOptions { tol, max_iter: cfg.int("max_iter"), ..Default::default() };
    let (state, w) = picard_solve(&problem, &grid, &o)?;
    let eta = problem.eta;
    let pts = probe_points();
    let t0 = grid.times[0];
    let d2 = check_self_similarity(&*w, 2.0, &[t0], &pts, eta);
    let d3 = check_self_similarity(&*w, 3.0, &[t0], &pts, eta);
    let prof = self_similar_profile(w.clone(), &grid.times, &pts, eta);

    let report = PicardReport {
        preset: cfg.text("preset"),
        eps: problem.eps,
        eta,
        certificate: problem.certificate,
        self_similar: problem.self_similar,
        axisymmetric: problem.axisymmetric,
        grid: &grid,
        tol,
        state: &state,
        deviation_lambda2: d2,
        deviation_lambda3: d3,
        profile_deviations: prof.deviation_metrics.clone(),
    };
    write_json(&cfg.output_dir.join("picard.json"), &report)?;

    let header = ["t", "r", "theta", "phi", "w1", "w2", "w3", "y1_weighted"];
    let meta = [("preset", cfg.text("preset").to_string()), ("iterations", state.iterations.to_string())];
    let mut csv = CsvOut::create(&cfg.output_dir.join("picard.csv"), &meta, &header)?;
    for (t, x, phi) in grid.nodes::<f64>() {
        let v = w.eval(t, x);
        let r = x.norm();
        let th = (x[2] / r).clamp(-1.0, 1.0).acos();
        csv.row(&[t, r, th, phi, v[0], v[1], v[2], v.norm() * y1_weight(t, &x, eta)])?;
    }
    csv.finish()?;

    let mut s = Section::new("perturbed");
    let y1 = *state.y1_norms.last().unwrap_or(&f64::NAN);
    s.constant("linear_constant", state.linear_constant);
    s.constant("y1_norm", y1);
    s.constant("iterations", state.iterations as f64);
    s.constant("deviation_lambda2", d2);
    s.constant("deviation_lambda3", d3);
    let worst = state.contraction_factors.iter().fold(0.0, |m, f| nan_max(m, *f));
    s.check("contraction_factor", worst, Lt, 0.5, &[9]);
    s.check("fixed_point_residual", state.residual, Lt, 2.0 * tol, &[9]);
    s.check("y1_norm_bound", y1 / (2.0 * state.linear_constant * problem.eps), Le, 1.0, &[9]);
    println!(
        "converged in {} iterations: |w|_Y1 = {:.6e}, C1 = {:.6e}, residual {:.3e}, deviation (2) {:.3e}, (3) {:.3e}",
        state.iterations, y1, state.linear_constant, state.residual, d2, d3
    );
    Ok(RunOutput { sections: vec![s], grid: Some(format!("{grid:?}")) })
}
