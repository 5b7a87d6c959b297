//! Picard solver for the perturbed system `w = w_L + w_N(w)` with
//! `w_L = e^{t Delta} w0`, `w_N(w)_i = -int_0^t int d_k S_ij(s, x - y) F_kj(t - s, y)`
//! and `F = w (x) w + U (x) w + w (x) U~`, plus the scaling checks of its solutions.
//!
//! Iterates are stored on a grid in the similarity variables `(t, xi = |x|/sqrt t,
//! polar angle, azimuth)` as `Q = (|x| + sqrt t)^{1-eta} |x|^eta w`, the Y1-weighted
//! field, in the cylindrical frame of each node's azimuth. Between nodes `Q` is
//! interpolated linearly in `(log t, log xi, polar, azimuth)` and held constant
//! outside the grid, which extends iterates self-similarly below the first slice.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fields::{divergence, space_fn, Field, FieldHandle, FieldValue, Zero};
use crate::linalg::{Mat3, Vec3};
use crate::oseen::heat_kernel;
use crate::potentials::{bipolar_integral, theta_history, two_center_rule, two_sided_time_nodes, PotentialQuadratureSpec};
use crate::scalar::Real;

/// Y1 weight `(|x| + sqrt t)^{1-eta} |x|^eta`.
pub fn y1_weight<T: Real>(t: T, x: &Vec3<T>, eta: T) -> T {
    let r = x.norm();
    (r + t.sqrt()).powf(T::one() - eta) * r.powf(eta)
}

/// Gradient weight of the Y2 norm, `(|x| + sqrt t)^{1-eta} |x|^{1+eta}`.
pub fn y2_gradient_weight<T: Real>(t: T, x: &Vec3<T>, eta: T) -> T {
    y1_weight(t, x, eta) * x.norm()
}

/// Data `(U, U~, w0, eta, eps)` of the perturbed system with measured certificates.
#[derive(Clone)]
pub struct PerturbedProblem<T: Real> {
    pub u: FieldHandle<T, Vec3<T>>,
    pub u_tilde: FieldHandle<T, Vec3<T>>,
    pub w0: FieldHandle<T, Vec3<T>>,
    pub eta: T,
    pub eps: T,
    /// `max |x| (|U| + |U~| + |w0|)` on the certification grid.
    pub certificate: T,
    /// `max |x|^2 (|grad U| + |grad U~| + |grad w0|)`, when requested.
    pub gradient_certificate: Option<T>,
    /// Caller assertion that all data are (-1)-homogeneous; checked on samples.
    pub self_similar: bool,
    /// Whether all data commute with rotations about `e_3` (measured).
    pub axisymmetric: bool,
}

fn certification_points<T: Real>() -> Vec<Vec3<T>> {
    let mut pts = Vec::new();
    for i in 0..25 {
        let r = T::lit(10f64.powf(-2.0 + 4.0 * i as f64 / 24.0));
        for j in 0..12 {
            let th = T::PI() * (T::from_count(j) + T::lit(0.5)) / T::lit(12.0);
            for k in 0..8 {
                let ph = T::PI() * T::lit(2.0) * (T::from_count(k) + T::lit(0.25)) / T::lit(8.0);
                pts.push(Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * r);
            }
        }
    }
    pts
}

fn sample_points<T: Real>() -> Vec<Vec3<T>> {
    (0..20)
        .map(|i| {
            let f = T::from_count(i);
            let r = T::lit(0.07) * T::lit(1.6).powf(f);
            let (s, c) = (f * T::lit(0.61) + T::lit(0.3)).sin_cos();
            let (sp, cp) = (f * T::lit(2.39)).sin_cos();
            Vec3::new(s * cp, s * sp, c) * r
        })
        .collect()
}

fn check_finite<T: Real>(v: Vec3<T>, what: &str, x: &Vec3<T>) -> Result<Vec3<T>> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { node: format!("{what} at ({:e}, {:e}, {:e})", x[0], x[1], x[2]) })
    }
}

impl<T: Real> PerturbedProblem<T> {
    /// Validates `eta`, `eps`, the divergence of `w0` and the X1 certificate.
    pub fn new(
        u: FieldHandle<T, Vec3<T>>,
        u_tilde: FieldHandle<T, Vec3<T>>,
        w0: FieldHandle<T, Vec3<T>>,
        eta: T,
        eps: T,
    ) -> Result<Self> {
        if !(eta > T::zero() && eta < T::one()) {
            return Err(domain("eta must lie in (0, 1)"));
        }
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(domain("eps must be positive"));
        }
        let mut cert = T::zero();
        for x in certification_points::<T>() {
            let r = x.norm();
            let s = check_finite(u.eval(T::zero(), x), "U", &x)?.norm()
                + check_finite(u_tilde.eval(T::zero(), x), "U~", &x)?.norm()
                + check_finite(w0.eval(T::zero(), x), "w0", &x)?.norm();
            cert = cert.max(r * s);
        }
        if cert > eps * (T::one() + T::lit(1e-9)) {
            return Err(Error::Contract(format!(
                "X1 certificate {:e} exceeds eps = {:e}",
                cert.as_f64(),
                eps.as_f64()
            )));
        }
        for x in sample_points::<T>() {
            let r = x.norm();
            let d = divergence(&*w0, T::zero(), x, r * T::lit(1e-4))?;
            if d.abs() * r * r > T::lit(1e-6) * eps {
                return Err(Error::Contract(format!(
                    "div w0 = {:e} at |x| = {:e}",
                    d.as_f64(),
                    r.as_f64()
                )));
            }
        }
        let mut axisymmetric = true;
        let rot = Mat3::rotation(Vec3::unit(2), T::lit(0.9));
        for x in sample_points::<T>() {
            let rx = rot.apply(&x);
            for f in [&u, &u_tilde, &w0] {
                let a = rot.apply(&f.eval(T::zero(), x));
                let b = f.eval(T::zero(), rx);
                if (a - b).norm() > T::lit(1e-10) * (a.norm() + b.norm() + eps / x.norm()) {
                    axisymmetric = false;
                }
            }
        }
        Ok(PerturbedProblem {
            u,
            u_tilde,
            w0,
            eta,
            eps,
            certificate: cert,
            gradient_certificate: None,
            self_similar: false,
            axisymmetric,
        })
    }

    /// Asserts (-1)-homogeneity of `U`, `U~` and `w0`; checked at samples.
    pub fn assert_self_similar(mut self) -> Result<Self> {
        for x in sample_points::<T>() {
            for (name, f) in [("U", &self.u), ("U~", &self.u_tilde), ("w0", &self.w0)] {
                let a = f.eval(T::zero(), x);
                for lam in [T::lit(2.0), T::lit(3.7)] {
                    let b = f.eval(T::zero(), x * lam) * lam;
                    if (a - b).norm() > T::lit(1e-10) * (a.norm() + self.eps / x.norm()) {
                        return Err(Error::Contract(format!("{name} is not (-1)-homogeneous")));
                    }
                }
            }
        }
        self.self_similar = true;
        Ok(self)
    }

    /// Measures `max |x|^2 (|grad U| + |grad U~| + |grad w0|)` by central differences
    /// and requires it to be at most `eps`.
    pub fn with_gradient_certificate(mut self) -> Result<Self> {
        let mut cert = T::zero();
        for x in certification_points::<T>() {
            let r = x.norm();
            let h = r * T::lit(1e-5);
            let mut s = T::zero();
            for f in [&self.u, &self.u_tilde, &self.w0] {
                let mut g = Mat3::zero();
                for k in 0..3 {
                    let e = Vec3::unit(k) * h;
                    let d = (f.eval(T::zero(), x + e) - f.eval(T::zero(), x - e)) * (T::lit(0.5) / h);
                    for i in 0..3 {
                        g.0[i][k] = d[i];
                    }
                }
                s += g.frobenius();
            }
            cert = cert.max(r * r * s);
        }
        if cert > self.eps * (T::one() + T::lit(1e-6)) {
            return Err(Error::Contract(format!(
                "gradient certificate {:e} exceeds eps = {:e}",
                cert.as_f64(),
                self.eps.as_f64()
            )));
        }
        self.gradient_certificate = Some(cert);
        Ok(self)
    }

    /// `F_kj = w_k w_j + U_k w_j + w_k U~_j` at `y`.
    pub fn flux_tensor(&self, w: &Vec3<T>, y: &Vec3<T>) -> Mat3<T> {
        let u = self.u.eval(T::zero(), *y);
        let ut = self.u_tilde.eval(T::zero(), *y);
        w.outer(w) + u.outer(w) + w.outer(&ut)
    }
}

/// Landau solution along `e_3` with homogeneous norm `sup |x||U| = eps`.
pub fn landau_background<T: Real>(eps: T) -> Result<FieldHandle<T, Vec3<T>>> {
    let sol = crate::landau::LandauSolution::with_homogeneous_norm(eps, Vec3::unit(2))?;
    Ok(Arc::new(sol))
}

/// Swirl `amp (-x_2, x_1, 0) / |x|^2`, modulated by `1 + m sin(2 pi log|x| / log 2)`.
pub fn swirl_data<T: Real>(amp: T, modulation: T) -> FieldHandle<T, Vec3<T>> {
    let k = T::lit(2.0) * T::PI() / T::LN_2();
    Arc::new(space_fn(move |x: Vec3<T>| {
        let r2 = x.norm2();
        if r2 == T::zero() {
            return Vec3::zero();
        }
        let m = T::one() + modulation * (k * r2.sqrt().ln()).sin();
        Vec3::new(-x[1], x[0], T::zero()) * (amp * m / r2)
    }))
}

/// Which data set [`preset_problem`] builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Preset {
    /// Zero data.
    Zero,
    /// `U = U~ = U^b` and `w0` the swirl, each of homogeneous norm `eps`.
    SelfSimilar,
    /// As `SelfSimilar` with `w0` modulated by `1 + 0.3 sin(2 pi log|x| / log 2)`.
    DiscretelySelfSimilar,
}

/// Problem for a preset; the certified bound is `3 eps` (or `1.3` times that for the
/// modulated swirl) since each of the three fields has norm `eps`.
pub fn preset_problem<T: Real>(preset: Preset, eps: T, eta: T) -> Result<PerturbedProblem<T>> {
    match preset {
        Preset::Zero => {
            let z: FieldHandle<T, Vec3<T>> = Arc::new(Zero::<Vec3<T>>::new());
            PerturbedProblem::new(z.clone(), z.clone(), z, eta, eps)?.assert_self_similar()
        }
        Preset::SelfSimilar => {
            let u = landau_background(eps)?;
            let p = PerturbedProblem::new(u.clone(), u, swirl_data(eps, T::zero()), eta, T::lit(3.0) * eps)?;
            p.assert_self_similar()
        }
        Preset::DiscretelySelfSimilar => {
            let u = landau_background(eps)?;
            PerturbedProblem::new(u.clone(), u, swirl_data(eps, T::lit(0.3)), eta, T::lit(3.3) * eps)
        }
    }
}

/// Heat flow `int Gamma(t, x - y) w0(y) dy`, evaluated at unit time in `y / sqrt t`.
pub fn linear_part<T: Real>(
    problem: &PerturbedProblem<T>,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
) -> Result<Vec3<T>> {
    if !(t > T::zero()) {
        return Err(domain("linear part needs t > 0"));
    }
    let rt = t.sqrt();
    let xs = *x * rt.recip();
    let outer = xs.norm() + T::lit(12.0);
    let nodes = two_center_rule(&xs, &Vec3::zero(), &[T::one()], None, outer, spec);
    let mut acc = Vec3::zero();
    for (z, w) in nodes {
        let g = heat_kernel(T::one(), &(xs - z))?;
        if g == T::zero() {
            continue;
        }
        let v = problem.w0.eval(T::zero(), z * rt);
        acc += v * (g * w);
    }
    check_finite(acc, "linear part", x)
}

/// `w_N(w)(t, x)` by [`theta_history`]; `w` must satisfy `Y1`-weighted `|w| <= y1_bound`
/// at every quadrature node.
pub fn nonlinear_part<T: Real, W: Field<T, Value = Vec3<T>> + ?Sized>(
    problem: &PerturbedProblem<T>,
    w: &W,
    y1_bound: T,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
) -> Result<Vec3<T>> {
    let slack = y1_bound * (T::one() + T::lit(1e-9)) + T::min_positive_value();
    let v = theta_history(
        |tau, y| {
            let wv = w.eval(tau, *y);
            if !wv.is_finite() {
                return Err(Error::NonFinite { node: format!("w at t = {:e}", tau.as_f64()) });
            }
            if wv.norm() * y1_weight(tau, y, problem.eta) > slack {
                return Err(Error::Contract(format!(
                    "Y1 envelope {:e} violated at t = {:e}, |y| = {:e}",
                    y1_bound.as_f64(),
                    tau.as_f64(),
                    y.norm().as_f64()
                )));
            }
            Ok(problem.flux_tensor(&wv, y).transpose())
        },
        t,
        x,
        spec,
    )?;
    check_finite(v, "nonlinear part", x)
}

/// Memo grid in the similarity variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardGrid {
    /// Time slices, increasing; one slice is the self-similar fast path.
    pub times: Vec<f64>,
    pub xi_min: f64,
    pub xi_max: f64,
    /// Geometric nodes in `xi = |x| / sqrt t`.
    pub n_xi: usize,
    /// Polar nodes including both poles.
    pub n_theta: usize,
    /// Azimuthal nodes; 1 stores a single meridian (axisymmetric data).
    pub n_phi: usize,
}

impl Default for PicardGrid {
    /// 16 slices geometric in `[1e-2, 4]`, 24 x 16 x 32 nodes, `xi in [0.05, 20]`.
    fn default() -> Self {
        PicardGrid {
            times: (0..16).map(|i| 1e-2 * 400f64.powf(i as f64 / 15.0)).collect(),
            xi_min: 0.05,
            xi_max: 20.0,
            n_xi: 24,
            n_theta: 16,
            n_phi: 32,
        }
    }
}

impl PicardGrid {
    /// Single slice `t = 1` on one meridian.
    pub fn self_similar(n_xi: usize, n_theta: usize, xi_min: f64, xi_max: f64) -> Self {
        PicardGrid { times: vec![1.0], xi_min, xi_max, n_xi, n_theta, n_phi: 1 }
    }

    fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(domain("grid times must be positive"));
        }
        if self.times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(domain("grid times must increase"));
        }
        if !(self.xi_min > 0.0 && self.xi_max > self.xi_min && self.xi_max.is_finite()) {
            return Err(domain("grid needs 0 < xi_min < xi_max"));
        }
        if self.n_xi < 2 || self.n_theta < 2 || self.n_phi == 0 {
            return Err(domain("grid needs n_xi >= 2, n_theta >= 2, n_phi >= 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.n_xi * self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn xi(&self, a: usize) -> f64 {
        self.xi_min * (self.xi_max / self.xi_min).powf(a as f64 / (self.n_xi - 1) as f64)
    }

    fn theta(&self, b: usize) -> f64 {
        std::f64::consts::PI * b as f64 / (self.n_theta - 1) as f64
    }

    fn phi(&self, l: usize) -> f64 {
        2.0 * std::f64::consts::PI * l as f64 / self.n_phi as f64
    }

    fn index(&self, i: usize, a: usize, b: usize, l: usize) -> usize {
        ((i * self.n_xi + a) * self.n_theta + b) * self.n_phi + l
    }

    /// `(t, x, azimuth)` of every node, in storage order.
    pub fn nodes<T: Real>(&self) -> Vec<(T, Vec3<T>, T)> {
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.times {
            for a in 0..self.n_xi {
                let r = t.sqrt() * self.xi(a);
                for b in 0..self.n_theta {
                    let th = self.theta(b);
                    for l in 0..self.n_phi {
                        let ph = self.phi(l);
                        let x = [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()];
                        out.push((T::lit(t), Vec3::from_f64(x), T::lit(ph)));
                    }
                }
            }
        }
        out
    }
}

/// Cylindrical frame `(e_rho, e_phi, e_z)` at azimuth `phi`, as rows.
fn cylinder_frame<T: Real>(phi: T) -> Mat3<T> {
    let (s, c) = phi.sin_cos();
    Mat3::from_rows([Vec3::new(c, s, T::zero()), Vec3::new(-s, c, T::zero()), Vec3::unit(2)])
}

/// Linear interpolation weights on a sorted axis, constant outside.
fn bracket(axis: &[f64], v: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || v <= axis[0] {
        return (0, 0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let k = axis.partition_point(|a| *a <= v).clamp(1, n - 1) - 1;
    let f = (v - axis[k]) / (axis[k + 1] - axis[k]);
    (k, k + 1, f)
}

/// A frozen iterate: weighted cylindrical components at the grid nodes.
pub struct Memo<T> {
    grid: Arc<PicardGrid>,
    log_t: Vec<f64>,
    log_xi: Vec<f64>,
    eta: T,
    q: Vec<Vec3<T>>,
}

impl<T: Real> Memo<T> {
    /// Stores Cartesian node values `v` (storage order of [`PicardGrid::nodes`]).
    fn from_values(grid: Arc<PicardGrid>, nodes: &[(T, Vec3<T>, T)], values: &[Vec3<T>], eta: T) -> Self {
        let q = nodes
            .iter()
            .zip(values)
            .map(|((t, x, ph), v)| cylinder_frame(*ph).apply(v) * y1_weight(*t, x, eta))
            .collect();
        let log_t = grid.times.iter().map(|t| t.ln()).collect();
        let log_xi = (0..grid.n_xi).map(|a| grid.xi(a).ln()).collect();
        Memo { grid, log_t, log_xi, eta, q }
    }

    /// Largest stored weighted magnitude: the grid Y1 norm.
    pub fn y1_norm(&self) -> T {
        self.q.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// Grid Y1 distance to another iterate on the same grid.
    pub fn distance(&self, other: &Memo<T>) -> T {
        self.q.iter().zip(&other.q).fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }

    pub fn grid(&self) -> &PicardGrid {
        &self.grid
    }

    fn interpolate(&self, t: T, x: &Vec3<T>) -> Option<(Vec3<T>, T)> {
        let r = x.norm();
        if !(t > T::zero()) || r == T::zero() {
            return None;
        }
        let g = &self.grid;
        let rt = t.sqrt();
        let xi = (r / rt).as_f64();
        let (i0, i1, ft) = bracket(&self.log_t, t.as_f64().ln());
        let (a0, a1, fx) = bracket(&self.log_xi, xi.ln());
        let th = (x[2] / r).max(-T::one()).min(T::one()).acos().as_f64();
        let pos_th = th / std::f64::consts::PI * (g.n_theta - 1) as f64;
        let b0 = (pos_th.floor() as usize).min(g.n_theta - 2);
        let fth = pos_th - b0 as f64;
        let ph = x[1].atan2(x[0]);
        let (l0, l1, fph) = if g.n_phi == 1 {
            (0, 0, 0.0)
        } else {
            let pos = ph.as_f64().rem_euclid(2.0 * std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
                * g.n_phi as f64;
            let l0 = (pos.floor() as usize).min(g.n_phi - 1);
            (l0, (l0 + 1) % g.n_phi, pos - l0 as f64)
        };
        let mut q = Vec3::zero();
        for (i, wi) in [(i0, 1.0 - ft), (i1, ft)] {
            for (a, wa) in [(a0, 1.0 - fx), (a1, fx)] {
                for (b, wb) in [(b0, 1.0 - fth), (b0 + 1, fth)] {
                    for (l, wl) in [(l0, 1.0 - fph), (l1, fph)] {
                        let w = wi * wa * wb * wl;
                        if w != 0.0 {
                            q += self.q[g.index(i, a, b, l)] * T::lit(w);
                        }
                    }
                }
            }
        }
        Some((q, ph))
    }
}

impl<T: Real> Field<T> for Memo<T> {
    type Value = Vec3<T>;

    fn domain(&self) -> crate::fields::Domain {
        crate::fields::Domain::SpaceTime
    }

    /// Interpolated iterate; zero at `x = 0` or `t <= 0`.
    fn eval(&self, t: T, x: Vec3<T>) -> Vec3<T> {
        match self.interpolate(t, &x) {
            None => Vec3::zero(),
            Some((q, ph)) => cylinder_frame(ph).apply_t(&q) * y1_weight(t, &x, self.eta).recip(),
        }
    }
}

/// Options of [`picard_solve`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Stop when the grid Y1 distance of successive iterates drops below this.
    pub tol: f64,
    /// Rule for `w_N`.
    pub spec: PotentialQuadratureSpec,
    /// Rule for `w_L`.
    pub linear_spec: PotentialQuadratureSpec,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            max_iter: 30,
            tol: 1e-9,
            spec: picard_spec(),
            linear_spec: PotentialQuadratureSpec { radial_order: 10, angular_order: 10, ..Default::default() },
        }
    }
}

/// Rule used for `w_N` by default: order 4 panels, 6 azimuthal points, outer radius
/// `60 (|x| + sqrt t)`, time grading down to `1e-4 t`.
pub fn picard_spec() -> PotentialQuadratureSpec {
    PotentialQuadratureSpec {
        radial_order: 4,
        angular_order: 4,
        azimuth_points: 6,
        time_order: 4,
        space_box_halfwidth: 60.0,
        min_time_fraction: 1e-4,
        ..Default::default()
    }
}

/// Diagnostics of a Picard run.
#[derive(Clone, Serialize)]
pub struct PicardState<T: Real> {
    /// `w^0 = w_L, w^1, ...` as frozen memo fields.
    #[serde(skip)]
    pub iterate_fields: Vec<Arc<Memo<T>>>,
    /// Grid Y1 norm of each iterate.
    pub y1_norms: Vec<f64>,
    /// Grid Y2 norm of each iterate (gradient of the interpolant by central differences).
    pub y2_norms: Vec<f64>,
    /// `|w^{k+1} - w^k|_{Y1}` for each step.
    pub distances: Vec<f64>,
    /// `distances[k] / distances[k-1]`.
    pub contraction_factors: Vec<f64>,
    pub converged: bool,
    /// Number of maps `w -> w_L + w_N(w)` applied.
    pub iterations: usize,
    /// `C_1 = |w_L|_{Y1} / eps`.
    pub linear_constant: f64,
    /// `|w - w_L - w_N(w)|_{Y1}` on the grid for the returned `w`.
    pub residual: f64,
    pub grid_nodes: usize,
}

/// Map `w -> w_L + w_N(w)` at every node.
fn picard_map<T: Real>(
    problem: &PerturbedProblem<T>,
    w: &Memo<T>,
    w_l: &[Vec3<T>],
    nodes: &[(T, Vec3<T>, T)],
    spec: &PotentialQuadratureSpec,
) -> Result<Vec<Vec3<T>>> {
    let bound = w.y1_norm();
    if bound == T::zero() {
        return Ok(w_l.to_vec());
    }
    nodes
        .par_iter()
        .zip(w_l.par_iter())
        .map(|((t, x, _), l)| Ok(*l + nonlinear_part(problem, w, bound, *t, x, spec)?))
        .collect()
}

/// Grid Y2 norm: Y1 norm plus the weighted central-difference gradient of the interpolant.
fn y2_norm<T: Real>(w: &Memo<T>, nodes: &[(T, Vec3<T>, T)]) -> T {
    let mut m = T::zero();
    for (t, x, _) in nodes {
        let h = x.norm() * T::lit(1e-3);
        let mut g = Mat3::zero();
        for k in 0..3 {
            let e = Vec3::unit(k) * h;
            let d = (w.eval(*t, *x + e) - w.eval(*t, *x - e)) * (T::lit(0.5) / h);
            for i in 0..3 {
                g.0[i][k] = d[i];
            }
        }
        m = m.max(g.frobenius() * y2_gradient_weight(*t, x, w.eta));
    }
    w.y1_norm() + m
}

/// Picard iteration `w^{k+1} = w_L + w_N(w^k)` from `w^0 = w_L` on the memo grid.
///
/// Stops at the first `k` with `|w^{k+1} - w^k|_{Y1} < tol` and returns `w^k`, whose
/// fixed-point residual on the grid is exactly that distance. Three consecutive
/// contraction factors `>= 1` give [`Error::Divergence`].
pub fn picard_solve<T: Real>(
    problem: &PerturbedProblem<T>,
    grid: &PicardGrid,
    opts: &PicardOptions,
) -> Result<(PicardState<T>, FieldHandle<T, Vec3<T>>)> {
    grid.validate()?;
    if grid.n_phi == 1 && !problem.axisymmetric {
        return Err(domain("a single-meridian grid needs axisymmetric data"));
    }
    if grid.times.len() == 1 && !problem.self_similar {
        return Err(domain("a single time slice needs self-similar data"));
    }
    if !(opts.tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    let grid = Arc::new(grid.clone());
    let nodes = grid.nodes::<T>();
    let w_l: Vec<Vec3<T>> = nodes
        .par_iter()
        .map(|(t, x, _)| linear_part(problem, *t, x, &opts.linear_spec))
        .collect::<Result<_>>()?;
    let mut current = Arc::new(Memo::from_values(grid.clone(), &nodes, &w_l, problem.eta));
    let linear_constant = current.y1_norm().as_f64() / problem.eps.as_f64();
    let mut state = PicardState {
        iterate_fields: vec![current.clone()],
        y1_norms: vec![current.y1_norm().as_f64()],
        y2_norms: vec![y2_norm(&current, &nodes).as_f64()],
        distances: Vec::new(),
        contraction_factors: Vec::new(),
        converged: false,
        iterations: 0,
        linear_constant,
        residual: f64::NAN,
        grid_nodes: nodes.len(),
    };
    let tol = T::lit(opts.tol);
    while state.iterations < opts.max_iter {
        let values = picard_map(problem, &current, &w_l, &nodes, &opts.spec)?;
        let next = Arc::new(Memo::from_values(grid.clone(), &nodes, &values, problem.eta));
        state.iterations += 1;
        let d = next.distance(&current);
        if let Some(prev) = state.distances.last() {
            state.contraction_factors.push(d.as_f64() / prev);
        }
        state.distances.push(d.as_f64());
        if d < tol {
            state.converged = true;
            state.residual = d.as_f64();
            let w: FieldHandle<T, Vec3<T>> = current.clone();
            return Ok((state, w));
        }
        let n = state.contraction_factors.len();
        if n >= 3 && state.contraction_factors[n - 3..].iter().all(|f| *f >= 1.0) {
            return Err(Error::Divergence { factors: state.contraction_factors.clone() });
        }
        state.y1_norms.push(next.y1_norm().as_f64());
        state.y2_norms.push(y2_norm(&next, &nodes).as_f64());
        state.iterate_fields.push(next.clone());
        current = next;
    }
    Err(Error::NonConvergence {
        iterations: state.iterations,
        last_distance: state.distances.last().copied().unwrap_or(f64::NAN),
    })
}

/// `max |lambda w(lambda^2 t, lambda x) - w(t, x)| (|x| + sqrt t)^{1-eta} |x|^eta` over
/// probe times and points.
pub fn check_self_similarity<T: Real, W: Field<T, Value = Vec3<T>> + ?Sized>(
    w: &W,
    lambda: T,
    probe_times: &[T],
    points: &[Vec3<T>],
    eta: T,
) -> T {
    let mut m = T::zero();
    for &t in probe_times {
        for x in points {
            let a = w.eval(lambda * lambda * t, *x * lambda) * lambda;
            let b = w.eval(t, *x);
            m = m.max((a - b).norm() * y1_weight(t, x, eta));
        }
    }
    m
}

/// The same defect for spatial data: `max |lambda f(lambda x) - f(x)| |x|`.
pub fn data_scaling_defect<T: Real, F: Field<T, Value = Vec3<T>> + ?Sized>(f: &F, lambda: T, points: &[Vec3<T>]) -> T {
    points.iter().fold(T::zero(), |m, x| {
        let d = f.eval(T::zero(), *x * lambda) * lambda - f.eval(T::zero(), *x);
        m.max(d.norm() * x.norm())
    })
}

/// Profile `W(y) = w(1, y)` with the defects `max_y |sqrt t w(t, sqrt t y) - W(y)|`
/// (Y1-weighted at unit time) for each listed time.
pub struct SelfSimilarProfile<T: Real> {
    pub profile: FieldHandle<T, Vec3<T>>,
    pub deviation_metrics: Vec<(f64, f64)>,
}

pub fn self_similar_profile<T: Real>(
    w: FieldHandle<T, Vec3<T>>,
    times: &[T],
    points: &[Vec3<T>],
    eta: T,
) -> SelfSimilarProfile<T> {
    let src = w.clone();
    let profile: FieldHandle<T, Vec3<T>> = Arc::new(space_fn(move |y: Vec3<T>| src.eval(T::one(), y)));
    let deviation_metrics = times
        .iter()
        .map(|&t| {
            let rt = t.sqrt();
            let d = points.iter().fold(T::zero(), |m, y| {
                let diff = w.eval(t, *y * rt) * rt - profile.eval(T::zero(), *y);
                m.max(diff.norm() * y1_weight(T::one(), y, eta))
            });
            (t.as_f64(), d.as_f64())
        })
        .collect();
    SelfSimilarProfile { profile, deviation_metrics }
}

/// Pressure `p = -tr F / 3 + p.v. int K_ij(x - y) F_ij(t, y) dy`,
/// `K_ij(z) = (3 z_i z_j - |z|^2 delta_ij) / (4 pi |z|^5)`, the Newtonian-potential
/// solution of `-Delta p = d_i d_j F_ij`.
pub fn pressure<T: Real, W: Field<T, Value = Vec3<T>> + ?Sized>(
    problem: &PerturbedProblem<T>,
    w: &W,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
) -> Result<T> {
    if !(t > T::zero()) || x.norm() == T::zero() {
        return Err(domain("pressure needs t > 0 and x != 0"));
    }
    let rt = t.sqrt();
    let xs = *x * rt.recip();
    let f_at = |y: &Vec3<T>| problem.flux_tensor(&w.eval(t, *y), y);
    let fx = f_at(x);
    let rho = T::lit(spec.singularity_split_radius) * xs.norm();
    let outer = T::lit(spec.space_box_halfwidth) * (xs.norm() + T::one());
    let nodes = two_center_rule(&xs, &Vec3::zero(), &[T::one()], None, outer, spec);
    let four_pi = T::lit(4.0) * T::PI();
    let mut acc = T::zero();
    for (z, wt) in nodes {
        let d = xs - z;
        let r2 = d.norm2();
        let r = r2.sqrt();
        let mut f = f_at(&(z * rt));
        if r < rho {
            f = f - fx;
        }
        let mut k = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { r2 } else { T::zero() };
                k += (T::lit(3.0) * d[i] * d[j] - delta) * f.0[i][j];
            }
        }
        acc += k / (four_pi * r2 * r2 * r) * wt;
    }
    let p = acc - fx.trace() / T::lit(3.0);
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::NonFinite { node: "pressure".into() })
    }
}

/// Discrete weak-L^s quasi-norm of the pressure at time `t` over a radial grid in `|x|`
/// (axisymmetric data: one meridian of `n_theta` polar nodes).
pub fn pressure_weak_norm<T: Real, W: Field<T, Value = Vec3<T>> + ?Sized>(
    problem: &PerturbedProblem<T>,
    w: &W,
    t: T,
    s: T,
    radii: &[T],
    n_theta: usize,
    spec: &PotentialQuadratureSpec,
) -> Result<T> {
    let mut cells: Vec<(T, T)> = Vec::new();
    let gl = crate::quadrature::GaussLegendre::<T>::new(n_theta);
    for (i, &r) in radii.iter().enumerate() {
        let lo = if i == 0 { r } else { (r * radii[i - 1]).sqrt() };
        let hi = if i + 1 == radii.len() { r } else { (r * radii[i + 1]).sqrt() };
        let shell = (hi.powi(3) - lo.powi(3)) / T::lit(3.0);
        for (&mu, &wm) in gl.nodes.iter().zip(&gl.weights) {
            let st = (T::one() - mu * mu).max(T::zero()).sqrt();
            let x = Vec3::new(st, T::zero(), mu) * r;
            let p = pressure(problem, w, t, &x, spec)?;
            cells.push((p.abs(), shell * wm * T::lit(2.0) * T::PI()));
        }
    }
    cells.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite pressure"));
    let mut vol = T::zero();
    let mut best = T::zero();
    for (v, c) in cells {
        vol += c;
        best = best.max(v * vol.powf(s.recip()));
    }
    Ok(best)
}

/// Time integral `int_0^t ds int dy f_s(|y|) g_{t-s}(|x - y|)` of radial profiles.
fn model_integral(
    r: f64,
    t: f64,
    time_order: usize,
    f: impl Fn(f64, f64) -> f64 + Sync,
    g: impl Fn(f64, f64) -> f64 + Sync,
) -> f64 {
    two_sided_time_nodes::<f64>(time_order, 1e-10)
        .into_iter()
        .map(|(sigma, w)| {
            let s = t * sigma;
            let u = t - s;
            let val = bipolar_integral(
                r,
                &[s.sqrt(), u.sqrt()],
                8,
                |a| f(a, s),
                |b| g(b, u),
                |a_max| 4.0 * std::f64::consts::PI / (3.0 * a_max.powi(3)),
            );
            val * w * t
        })
        .sum()
}

/// Model integral of the `eta = 0` obstruction,
/// `int_0^t int (|y| + sqrt s)^-4 (|x-y| + sqrt(t-s))^-1 |x-y|^-1 dy ds`.
pub fn log_model_integral(r: f64, t: f64) -> f64 {
    model_integral(r, t, 6, |a, s| (a + s.sqrt()).powi(-4), |b, u| 1.0 / ((b + u.sqrt()) * b))
}

/// Left side of the `w_N` kernel bound for `k = 1, 2`,
/// `int_0^t int (|y| + sqrt s)^-4 (|x-y| + sqrt(t-s))^{-1+eta} |x-y|^{-k-eta} dy ds`.
pub fn wn_kernel_integral(r: f64, t: f64, eta: f64, k: u32) -> f64 {
    let c = k as f64 + eta;
    model_integral(r, t, 6, |a, s| (a + s.sqrt()).powi(-4), move |b, u| (b + u.sqrt()).powf(eta - 1.0) * b.powf(-c))
}

/// Right side `(|x| + sqrt t)^{-1+eta} |x|^{1-k-eta}` of the same bound.
pub fn wn_kernel_bound(r: f64, t: f64, eta: f64, k: u32) -> f64 {
    (r + t.sqrt()).powf(eta - 1.0) * r.powf(1.0 - k as f64 - eta)
}

/// Values of the `eta = 0` model integral near the origin.
#[derive(Clone, Debug, Serialize)]
pub struct LogWitness {
    pub t: f64,
    /// `|x| = sqrt t 2^{-j}`.
    pub radii: Vec<f64>,
    /// `I (|x| + sqrt t)`.
    pub weighted: Vec<f64>,
    /// `log(sqrt t / (2|x|))`.
    pub log_factor: Vec<f64>,
    /// Successive differences of `weighted`.
    pub differences: Vec<f64>,
    /// Least-squares slope of `weighted` against `log_factor`.
    pub slope: f64,
    /// Weighted value at `|x| = sqrt t`.
    pub unit_value: f64,
    pub monotone: bool,
}

/// Evaluates the model integral at `|x| = sqrt t 2^{-j}` for the listed `j`; requires
/// `U` nonzero (the obstruction concerns a nonzero background).
pub fn log_correction_witness<T: Real>(problem: &PerturbedProblem<T>, t: f64, js: &[i32]) -> Result<LogWitness> {
    let nonzero = sample_points::<T>().iter().any(|x| {
        problem.u.eval(T::zero(), *x).norm() > T::zero() || problem.u_tilde.eval(T::zero(), *x).norm() > T::zero()
    });
    if !nonzero {
        return Err(domain("log witness needs a nonzero background U"));
    }
    if !(t > 0.0) {
        return Err(domain("log witness needs t > 0"));
    }
    let rt = t.sqrt();
    let radii: Vec<f64> = js.iter().map(|&j| rt * 2f64.powi(-j)).collect();
    let weighted: Vec<f64> = radii.par_iter().map(|&r| log_model_integral(r, t) * (r + rt)).collect();
    let log_factor: Vec<f64> = radii.iter().map(|r| (rt / (2.0 * r)).ln()).collect();
    let differences: Vec<f64> = weighted.windows(2).map(|p| p[1] - p[0]).collect();
    let n = weighted.len() as f64;
    let mx = log_factor.iter().sum::<f64>() / n;
    let my = weighted.iter().sum::<f64>() / n;
    let sxy: f64 = log_factor.iter().zip(&weighted).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = log_factor.iter().map(|x| (x - mx) * (x - mx)).sum();
    let monotone = differences.iter().all(|d| *d > 0.0);
    Ok(LogWitness {
        t,
        radii,
        weighted,
        log_factor,
        differences,
        slope: sxy / sxx,
        unit_value: log_model_integral(rt, t) * 2.0 * rt,
        monotone,
    })
}

/// Grid value of a spatial field's `|x| |f|` maximum over the certification points.
pub fn homogeneous_norm<T: Real, F: Field<T, Value = Vec3<T>> + ?Sized>(f: &F) -> T {
    certification_points::<T>()
        .iter()
        .fold(T::zero(), |m, x| m.max(f.eval(T::zero(), *x).magnitude() * x.norm()))
}
