//! Space-time potentials of the Stokes tensor:
//! `Lambda g(t,x) = int_0^inf int S(s, x-y) g(t-s, y) dy ds` and
//! `Theta G(t,x)_i = -int_0^inf int d_k S_ij(s, x-y) G_jk(t-s, y) dy ds`,
//! plus the convolution estimate `int (|x-y|+l)^-b |x-y|^-c (|y|+sqrt t)^{-3-mu} dy`.
//!
//! Steady sources use the exact time integral of `S` (the steady Stokeslet),
//! time-periodic sources are expanded in Fourier modes and use the exact
//! one-sided transform of `S` per mode, and general sources are integrated
//! over a finite horizon with an envelope bound for the remainder.

use std::sync::OnceLock;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fields::{FieldHandle, FieldValue};
use crate::linalg::{Mat3, Vec3};
use crate::oseen::{decay_constant, frequency_kernel, oseen_with_gradient, stokeslet, stokeslet_gradient, CMat3};
use crate::quadrature::{clean_breaks, refine, GaussLegendre};
use crate::scalar::Real;

/// Quadrature orders and truncation parameters for the potential operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialQuadratureSpec {
    /// Gauss-Legendre points per radial panel.
    pub radial_order: usize,
    /// Gauss-Legendre points per polar panel.
    pub angular_order: usize,
    /// Uniform azimuthal points.
    pub azimuth_points: usize,
    /// Gauss-Legendre points per time panel (general sources).
    pub time_order: usize,
    /// Time samples per period (periodic sources).
    pub fourier_samples: usize,
    /// Radius of the ball around the target, as a fraction of its distance to the source center.
    pub singularity_split_radius: f64,
    /// Outer truncation radius as a multiple of `|x - c| + 1`.
    pub space_box_halfwidth: f64,
    /// Horizon `T_max = t_max_factor * (1 + t)` for general sources.
    pub t_max_factor: f64,
    /// Smallest time panel boundary relative to the horizon.
    pub min_time_fraction: f64,
    /// Largest time panel for general sources (their own time scale); unbounded when `None`.
    pub max_time_step: Option<f64>,
}

impl Default for PotentialQuadratureSpec {
    fn default() -> Self {
        PotentialQuadratureSpec {
            radial_order: 8,
            angular_order: 8,
            azimuth_points: 16,
            time_order: 6,
            fourier_samples: 16,
            singularity_split_radius: 0.5,
            space_box_halfwidth: 1e4,
            t_max_factor: 100.0,
            min_time_fraction: 1e-9,
            max_time_step: None,
        }
    }
}

impl PotentialQuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radial_order < 4 || self.angular_order < 4 || self.time_order < 4 {
            return Err(domain("quadrature orders must be at least 4"));
        }
        if self.azimuth_points < 4 || self.fourier_samples < 2 {
            return Err(domain("azimuth points must be >= 4 and Fourier samples >= 2"));
        }
        if !(self.singularity_split_radius > 0.0 && self.singularity_split_radius < 1.0) {
            return Err(domain("singularity_split_radius must lie in (0, 1)"));
        }
        if !(self.space_box_halfwidth > 2.0) || !(self.t_max_factor > 0.0) {
            return Err(domain("truncation parameters must be positive"));
        }
        if !(self.min_time_fraction > 0.0 && self.min_time_fraction < 1.0) {
            return Err(domain("min_time_fraction must lie in (0, 1)"));
        }
        if self.max_time_step.is_some_and(|h| !(h > 0.0)) {
            return Err(domain("max_time_step must be positive"));
        }
        Ok(())
    }

    /// Every order multiplied by `factor` (the Fourier sample count too).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(2);
        PotentialQuadratureSpec {
            radial_order: s(self.radial_order),
            angular_order: s(self.angular_order),
            azimuth_points: s(self.azimuth_points),
            time_order: s(self.time_order),
            fourier_samples: s(self.fourier_samples),
            ..self.clone()
        }
    }

    /// Graded time nodes on `(0, t_max]`: geometric panels from
    /// `min_time_fraction * t_max` up to `t_max`, plus one panel at the origin.
    pub fn time_nodes<T: Real>(&self, t_max: T) -> Vec<(T, T)> {
        let gl = GaussLegendre::<T>::new(self.time_order);
        let lo = t_max * T::lit(self.min_time_fraction);
        let mut br = vec![T::zero()];
        let mut b = lo;
        while b < t_max {
            br.push(b);
            b = b * T::lit(2.0);
        }
        br.push(t_max);
        let mut br = clean_breaks(br, T::zero(), t_max);
        if let Some(h) = self.max_time_step {
            br = refine(&br, T::lit(h));
        }
        gl.composite_nodes(&br)
    }
}

/// Time dependence of a source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeProfile {
    /// Independent of time.
    Steady,
    /// Periodic with the given period.
    Periodic { period: f64 },
    /// Arbitrary; integrated over `[0, horizon]`, the source being taken as zero before
    /// `t - horizon`. Without a horizon, `t_max_factor * (1 + t)` plus an envelope tail bound.
    General { horizon: Option<f64> },
}

/// Caller-supplied bound `|G(t, y)| <= constant * <y - center>^{-power}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub constant: f64,
    pub power: f64,
    pub center: [f64; 3],
}

impl Envelope {
    pub fn new(constant: f64, power: f64) -> Self {
        Envelope { constant, power, center: [0.0; 3] }
    }

    pub fn centered(mut self, center: [f64; 3]) -> Self {
        self.center = center;
        self
    }

    pub fn bound<T: Real>(&self, y: &Vec3<T>) -> T {
        let c = Vec3::from_f64(self.center);
        T::lit(self.constant) * (T::one() + (*y - c).norm2()).powf(T::lit(-0.5 * self.power))
    }
}

/// Source field with its time profile, decay envelope and optional support.
#[derive(Clone)]
pub struct Source<T: Real, V> {
    pub field: FieldHandle<T, V>,
    pub profile: TimeProfile,
    pub envelope: Envelope,
    /// Radius about the envelope center outside which the field vanishes.
    pub support_radius: Option<f64>,
}

impl<T: Real, V: FieldValue<T>> Source<T, V> {
    pub fn new(field: FieldHandle<T, V>, profile: TimeProfile, envelope: Envelope) -> Self {
        Source { field, profile, envelope, support_radius: None }
    }

    pub fn with_support(mut self, radius: f64) -> Self {
        self.support_radius = Some(radius);
        self
    }

    fn center(&self) -> Vec3<T> {
        Vec3::from_f64(self.envelope.center)
    }

    fn sample(&self, t: T, y: &Vec3<T>) -> Result<V> {
        let v = self.field.eval(t, *y);
        if !v.all_finite() {
            return Err(Error::NonFinite {
                node: format!("t={:e}, y=({:e}, {:e}, {:e})", t, y[0], y[1], y[2]),
            });
        }
        let bound = self.envelope.bound(y);
        if v.magnitude() > bound * T::lit(1.0 + 1e-9) + T::lit(1e-300) {
            return Err(Error::Contract(format!(
                "envelope violated at t={:e}, y=({:e}, {:e}, {:e}): |G| = {:e} > {:e}",
                t,
                y[0],
                y[1],
                y[2],
                v.magnitude(),
                bound
            )));
        }
        Ok(v)
    }
}

/// Potential value with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PotentialValue<T> {
    pub value: Vec3<T>,
    /// Difference to a three-quarter-order evaluation plus the truncation bound.
    pub error_estimate: T,
    /// Analytic bound on the discarded far field and time tail.
    pub truncation_bound: T,
    pub nodes: usize,
}

/// Sorted breakpoints with consecutive positive entries at most a factor `ratio` apart.
pub fn refine_ratio<T: Real>(breaks: &[T], ratio: T) -> Vec<T> {
    let mut out = Vec::with_capacity(breaks.len());
    for p in breaks.windows(2) {
        out.push(p[0]);
        if p[0] > T::zero() {
            let mut b = p[0] * ratio;
            while b < p[1] / ratio.sqrt() {
                out.push(b);
                b = b * ratio;
            }
        }
    }
    if let Some(&l) = breaks.last() {
        out.push(l);
    }
    out
}

/// Spatial quadrature nodes `(y, weight)` for integrands singular at `x` and
/// decaying away from `c`. Inside the ball `|y - x| < split |x - c|` spherical
/// coordinates are centered at `x`; outside, at `c` with the polar variable
/// replaced by the distance `|y - x|`, so the excluded ball is a panel boundary.
/// `scales` are additional length scales used as radial breakpoints; the
/// outer radius about `c` is `min(support, outer)`.
pub fn two_center_rule<T: Real>(
    x: &Vec3<T>,
    c: &Vec3<T>,
    scales: &[T],
    support: Option<T>,
    outer: T,
    spec: &PotentialQuadratureSpec,
) -> Vec<(Vec3<T>, T)> {
    let two = T::lit(2.0);
    let diff = *x - *c;
    let d = diff.norm();
    let gl_r = GaussLegendre::<T>::new(spec.radial_order);
    let gl_a = GaussLegendre::<T>::new(spec.angular_order);
    let n_phi = spec.azimuth_points;
    let dphi = T::lit(2.0) * T::PI() / T::from_count(n_phi);
    let phis: Vec<(T, T)> = (0..n_phi)
        .map(|k| (dphi * (T::from_count(k) + T::lit(0.5))).sin_cos())
        .collect();
    let r_out = support.map_or(outer, |s| s.min(outer));
    let mut nodes = Vec::new();
    let tiny = T::lit(1e-12) * (T::one() + x.norm());
    let scale_breaks = |lo: T, hi: T, pts: &mut Vec<T>| {
        for &s in scales {
            for j in -4..=4 {
                let v = s * two.powi(j);
                if v > lo && v < hi {
                    pts.push(v);
                }
            }
        }
    };

    if d <= tiny {
        // single center at x
        let mut pts: Vec<T> = (1..=6).map(|k| r_out * two.powi(-k)).collect();
        scale_breaks(T::zero(), r_out, &mut pts);
        pts.push(T::one());
        let br = refine_ratio(&clean_breaks(pts, T::zero(), r_out), two);
        let frame = Mat3::frame_with_pole(Vec3::unit(2));
        for (s, ws) in gl_r.composite_nodes(&br) {
            for (mu, wm) in gl_a.mapped(-T::one(), T::one()) {
                let st = (T::one() - mu * mu).max(T::zero()).sqrt();
                for &(sp, cp) in &phis {
                    let dir = frame.apply_t(&Vec3::new(st * cp, st * sp, mu));
                    nodes.push((*x + dir * s, ws * wm * dphi * s * s));
                }
            }
        }
        return nodes;
    }

    let rho = T::lit(spec.singularity_split_radius) * d;
    let pole_in = Mat3::frame_with_pole(diff * (-T::one() / d));
    let pole_out = Mat3::frame_with_pole(diff * (T::one() / d));

    // part 1: ball about x, skipped when it cannot meet the support
    let ball_needed = support.is_none_or(|s| d - rho < s);
    if ball_needed {
        let mut pts: Vec<T> = (1..=6).map(|k| rho * two.powi(-k)).collect();
        scale_breaks(T::zero(), rho, &mut pts);
        if let Some(s) = support {
            // distances from x at which the support boundary is crossed
            for v in [d - s, s - d] {
                for k in 0..=8 {
                    let w = v + s * two.powi(-k);
                    for u in [v, w] {
                        if u > T::zero() && u < rho {
                            pts.push(u);
                        }
                    }
                }
            }
        }
        let br = refine_ratio(&clean_breaks(pts, T::zero(), rho), two);
        let gl_b = GaussLegendre::<T>::new(spec.angular_order + spec.angular_order / 2);
        for (r, wr) in gl_r.composite_nodes(&br) {
            for (mu, wm) in gl_b.mapped(-T::one(), T::one()) {
                let st = (T::one() - mu * mu).max(T::zero()).sqrt();
                for &(sp, cp) in &phis {
                    let dir = pole_in.apply_t(&Vec3::new(st * cp, st * sp, mu));
                    nodes.push((*x + dir * r, wr * wm * dphi * r * r));
                }
            }
        }
    }

    // part 2: about c, polar variable q = |y - x| restricted to q >= rho
    let mut pts: Vec<T> = (1..=6).map(|k| d * two.powi(-k)).collect();
    pts.extend([d - rho, d, d + rho, T::one()]);
    scale_breaks(T::zero(), r_out, &mut pts);
    if let Some(sr) = support {
        for k in 1..=8 {
            pts.push(sr * (T::one() - two.powi(-k)));
        }
    }
    let mut b = (d + rho).max(T::one());
    while b < r_out {
        pts.push(b);
        b = b * two;
    }
    let br = refine_ratio(&clean_breaks(pts, T::zero(), r_out), two);
    for (s, ws) in gl_r.composite_nodes(&br) {
        let q_lo = if (s - d).abs() < rho { rho } else { (s - d).abs() };
        let q_hi = s + d;
        if q_hi <= q_lo {
            continue;
        }
        let mut qb = vec![q_lo];
        let mut q = q_lo * two;
        while q < q_hi {
            qb.push(q);
            q = q * two;
        }
        qb.push(q_hi);
        for (q, wq) in gl_a.composite_nodes(&qb) {
            let mu = ((s * s + d * d - q * q) / (two * s * d)).max(-T::one()).min(T::one());
            let st = (T::one() - mu * mu).max(T::zero()).sqrt();
            let w = ws * s * s * wq * q / (s * d) * dphi;
            for &(sp, cp) in &phis {
                let dir = pole_out.apply_t(&Vec3::new(st * cp, st * sp, mu));
                nodes.push((*c + dir * s, w));
            }
        }
    }
    nodes
}

/// Deterministic parallel sum of `f(y) * w` over nodes.
fn node_sum<T: Real, F>(nodes: &[(Vec3<T>, T)], f: F) -> Result<Vec3<T>>
where
    F: Fn(&Vec3<T>) -> Result<Vec3<T>> + Sync,
{
    let parts: Vec<Result<Vec3<T>>> = nodes
        .par_chunks(512)
        .map(|chunk| {
            let mut acc = Vec3::zero();
            for (y, w) in chunk {
                acc += f(y)? * *w;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Vec3::zero();
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Which potential to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Lambda,
    Theta,
}

impl Kind {
    /// Homogeneity degree of the kernel's spatial decay.
    fn kernel_degree(self) -> f64 {
        match self {
            Kind::Lambda => 1.0,
            Kind::Theta => 2.0,
        }
    }
}

fn theta_contract<T: Real>(g: &[Mat3<T>; 3], m: &Mat3<T>) -> Vec3<T> {
    let mut out = Vec3::zero();
    for i in 0..3 {
        let mut acc = T::zero();
        for (k, gk) in g.iter().enumerate() {
            for j in 0..3 {
                acc += gk.0[i][j] * m.0[j][k];
            }
        }
        out[i] = -acc;
    }
    out
}

/// Source values the operators contract with the kernel.
pub trait Contractible<T: Real>: FieldValue<T> {
    fn contract_steady(x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Result<Vec3<T>>;
    fn contract_time(s: T, x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Vec3<T>;
    /// `Re sum_m kernel_m * coefficient_m`, with complex coefficients stored as component lists.
    fn contract_mode(k: &CMat3<T>, g: &[CMat3<T>; 3], coef: &[Complex<T>]) -> Complex3<T>;
    fn kind() -> &'static str;
}

/// Complex 3-vector.
pub type Complex3<T> = [Complex<T>; 3];

impl<T: Real> Contractible<T> for Vec3<T> {
    fn contract_steady(x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Result<Vec3<T>> {
        Ok(stokeslet(&(*x - *y))?.apply(v))
    }
    fn contract_time(s: T, x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Vec3<T> {
        oseen_with_gradient(s, &(*x - *y)).0.apply(v)
    }
    fn contract_mode(k: &CMat3<T>, _g: &[CMat3<T>; 3], coef: &[Complex<T>]) -> Complex3<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = [zero; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i] = out[i] + k[i][j] * coef[j];
            }
        }
        out
    }
    fn kind() -> &'static str {
        "lambda"
    }
}

impl<T: Real> Contractible<T> for Mat3<T> {
    fn contract_steady(x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Result<Vec3<T>> {
        Ok(theta_contract(&stokeslet_gradient(&(*x - *y))?, v))
    }
    fn contract_time(s: T, x: &Vec3<T>, y: &Vec3<T>, v: &Self) -> Vec3<T> {
        theta_contract(&oseen_with_gradient(s, &(*x - *y)).1, v)
    }
    fn contract_mode(_k: &CMat3<T>, g: &[CMat3<T>; 3], coef: &[Complex<T>]) -> Complex3<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = [zero; 3];
        for i in 0..3 {
            for (kk, gk) in g.iter().enumerate() {
                for j in 0..3 {
                    out[i] = out[i] - gk[i][j] * coef[3 * j + kk];
                }
            }
        }
        out
    }
    fn kind() -> &'static str {
        "theta"
    }
}

/// `Theta G(t, x)` with error estimate.
pub fn theta_apply<T: Real>(
    g: &Source<T, Mat3<T>>,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
) -> Result<PotentialValue<T>> {
    apply(g, t, x, spec, Kind::Theta)
}

/// `Lambda g(t, x)` with error estimate.
pub fn lambda_apply<T: Real>(
    g: &Source<T, Vec3<T>>,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
) -> Result<PotentialValue<T>> {
    apply(g, t, x, spec, Kind::Lambda)
}

fn apply<T: Real, V: Contractible<T>>(
    src: &Source<T, V>,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
    kind: Kind,
) -> Result<PotentialValue<T>> {
    spec.validate()?;
    if !(t.is_finite()) || !x.is_finite() {
        return Err(domain("evaluation point must be finite"));
    }
    let env = &src.envelope;
    if !(env.constant >= 0.0) || !env.power.is_finite() {
        return Err(domain("envelope constant must be non-negative and power finite"));
    }
    let compact = src.support_radius.is_some();
    if !compact && env.power + kind.kernel_degree() <= 3.0 {
        return Err(domain(format!(
            "envelope power {} is too weak for the {} potential (kernel decays like |x|^-{})",
            env.power,
            V::kind(),
            kind.kernel_degree()
        )));
    }
    let fine = evaluate(src, t, x, spec, kind)?;
    let coarse = evaluate(src, t, x, &spec.scaled(0.75).clamped(), kind)?;
    let diff = (fine.0 - coarse.0).norm();
    Ok(PotentialValue {
        value: fine.0,
        error_estimate: diff + fine.1,
        truncation_bound: fine.1,
        nodes: fine.2,
    })
}

impl PotentialQuadratureSpec {
    /// Keeps the azimuthal and Fourier counts usable after scaling down.
    fn clamped(mut self) -> Self {
        self.azimuth_points = self.azimuth_points.max(4);
        self.fourier_samples = self.fourier_samples.max(2);
        self
    }
}

/// Sup of `|d_x^l S| (|x| + sqrt t)^{3+l}`, computed once.
/// Time panels on `(0, 1)` graded geometrically (ratio 4) toward both ends down to `min_fraction`.
pub fn two_sided_time_nodes<T: Real>(order: usize, min_fraction: f64) -> Vec<(T, T)> {
    let gl = GaussLegendre::<T>::new(order);
    let mut br = vec![T::lit(0.5)];
    let mut h = 0.25;
    while h > min_fraction {
        br.push(T::lit(h));
        br.push(T::one() - T::lit(h));
        h *= 0.25;
    }
    gl.composite_nodes(&clean_breaks(br, T::zero(), T::one()))
}

/// `-int_0^t ds int dy d_k S_ij(s, x - y) G_jk(t - s, y)` for a history source `G`
/// that may be singular at the origin and at time zero.
///
/// Computed in the variables `s = t sigma`, `y = sqrt(t) z`, so the node set depends
/// on `x / sqrt(t)` only and the result inherits the parabolic scaling of `G`. The
/// spatial rule is [`two_center_rule`] with scales `sqrt(sigma)`, `sqrt(1 - sigma)`
/// and outer radius `space_box_halfwidth * (|x| + sqrt(t))`.
pub fn theta_history<T: Real, G>(g: G, t: T, x: &Vec3<T>, spec: &PotentialQuadratureSpec) -> Result<Vec3<T>>
where
    G: Fn(T, &Vec3<T>) -> Result<Mat3<T>> + Sync,
{
    if !(t > T::zero()) {
        return Err(domain("history integral needs t > 0"));
    }
    let rt = t.sqrt();
    let xs = *x * rt.recip();
    let outer = T::lit(spec.space_box_halfwidth) * (xs.norm() + T::one());
    let origin = Vec3::zero();
    let mut acc = Vec3::zero();
    for (sigma, ws) in two_sided_time_nodes::<T>(spec.time_order, spec.min_time_fraction) {
        let tau = t * (T::one() - sigma);
        let scales = [sigma.sqrt(), (T::one() - sigma).sqrt()];
        let nodes = two_center_rule(&xs, &origin, &scales, None, outer, spec);
        let part = node_sum(&nodes, |z| {
            let (_, grad) = oseen_with_gradient(sigma, &(xs - *z));
            Ok(theta_contract(&grad, &g(tau, &(*z * rt))?))
        })?;
        acc += part * ws;
    }
    Ok(acc * rt)
}

fn kernel_decay_constant(l: usize) -> f64 {
    static C: OnceLock<[f64; 2]> = OnceLock::new();
    let c = C.get_or_init(|| {
        let f = |l| {
            decay_constant(l, 0, 20, (1e-2, 1e2), (1e-2, 1e2))
                .map(|d| d.value * 1.01)
                .unwrap_or(f64::INFINITY)
        };
        [f(0), f(1)]
    });
    c[l]
}

/// `int_0^inf 4 pi r^2 (r + sqrt s)^{-3-l} <r>^{-p} dr`: by rearrangement, an
/// upper bound for the spatial integral of the kernel bound against the envelope.
fn centered_kernel_mass(s: f64, l: usize, p: f64) -> f64 {
    let gl = GaussLegendre::<f64>::new(12);
    let q = s.sqrt();
    let br = refine(&[-12.0, 12.0], 0.5);
    gl.composite(&br, |v| {
        let r = q * v.exp();
        4.0 * std::f64::consts::PI * r * r * (r + q).powf(-3.0 - l as f64)
            * (1.0 + r * r).powf(-0.5 * p)
            * r
    })
}

/// `(value, truncation bound, node count)`.
fn evaluate<T: Real, V: Contractible<T>>(
    src: &Source<T, V>,
    t: T,
    x: &Vec3<T>,
    spec: &PotentialQuadratureSpec,
    kind: Kind,
) -> Result<(Vec3<T>, T, usize)> {
    let c = src.center();
    let d = (*x - c).norm();
    let support = src.support_radius.map(T::lit);
    let outer = T::lit(spec.space_box_halfwidth) * (d + T::one());
    let env = src.envelope;
    let k_deg = kind.kernel_degree();
    let l = if kind == Kind::Lambda { 0 } else { 1 };
    // far-field bound beyond `outer` for steady and periodic kernels:
    // |K(z)| <= C_K |z|^{-k}, |z| >= s/2 there
    let far = |c_k: f64| -> f64 {
        if support.is_some_and(|s| s <= outer) {
            return 0.0;
        }
        let s_max = outer.as_f64();
        let p = env.power;
        4.0 * std::f64::consts::PI * c_k * 2f64.powf(k_deg) * env.constant * s_max.powf(3.0 - k_deg - p)
            / (k_deg + p - 3.0)
    };
    match src.profile {
        TimeProfile::Steady => {
            let nodes = two_center_rule(x, &c, &[], support, outer, spec);
            let val = node_sum(&nodes, |y| {
                let v = src.sample(t, y)?;
                if (*x - *y).norm2() == T::zero() {
                    return Ok(Vec3::zero());
                }
                V::contract_steady(x, y, &v)
            })?;
            // |E| <= 1/(4 pi |z|) (Frobenius sqrt(2)/(8 pi ...)); |grad E| <= 6 sqrt(27)/(8 pi |z|^2)
            let c_k = match kind {
                Kind::Lambda => 2.0 / (8.0 * std::f64::consts::PI),
                Kind::Theta => 6.0 * 27f64.sqrt() / (8.0 * std::f64::consts::PI),
            };
            Ok((val, T::lit(far(c_k)), nodes.len()))
        }
        TimeProfile::Periodic { period } => {
            if !(period > 0.0) {
                return Err(domain("period must be positive"));
            }
            let m = spec.fourier_samples;
            let p = T::lit(period);
            let samples: Vec<T> = (0..m).map(|n| p * T::from_count(n) / T::from_count(m)).collect();
            let n_modes = m.div_ceil(2); // modes 0..n_modes-1; Nyquist dropped
            let omegas: Vec<T> = (0..n_modes)
                .map(|k| T::lit(2.0) * T::PI() * T::from_count(k) / p)
                .collect();
            let nodes = two_center_rule(x, &c, &[], support, outer, spec);
            let val = node_sum(&nodes, |y| {
                let z = *x - *y;
                if z.norm2() == T::zero() {
                    return Ok(Vec3::zero());
                }
                let vals: Vec<Vec<T>> = samples
                    .iter()
                    .map(|&tn| src.sample(tn, y).map(|v| v.components()))
                    .collect::<Result<_>>()?;
                let nc = vals[0].len();
                let mut acc = Vec3::zero();
                for (k, &om) in omegas.iter().enumerate() {
                    // coefficient of e^{i om t}
                    let mut coef = vec![Complex::new(T::zero(), T::zero()); nc];
                    for (n, &tn) in samples.iter().enumerate() {
                        let ph = Complex::new(T::zero(), -om * tn).exp();
                        for (cc, v) in coef.iter_mut().zip(vals[n].iter()) {
                            *cc = *cc + ph * *v;
                        }
                    }
                    let inv_m = T::one() / T::from_count(m);
                    let shift = Complex::new(T::zero(), om * t).exp();
                    for cc in coef.iter_mut() {
                        *cc = *cc * inv_m * shift;
                    }
                    let (km, gm) = frequency_kernel(om, &z)?;
                    let out = V::contract_mode(&km, &gm, &coef);
                    let weight = if k == 0 { T::one() } else { T::lit(2.0) };
                    for i in 0..3 {
                        acc[i] += out[i].re * weight;
                    }
                }
                Ok(acc)
            })?;
            let c_k = match kind {
                Kind::Lambda => kernel_decay_constant(0),
                Kind::Theta => kernel_decay_constant(1) / 3.0,
            } * (2 * n_modes - 1) as f64;
            Ok((val, T::lit(far(c_k)), nodes.len()))
        }
        TimeProfile::General { horizon } => {
            let t_max = horizon.map_or(T::lit(spec.t_max_factor) * (T::one() + t), T::lit);
            if !(t_max > T::zero()) {
                return Err(domain("time horizon must be positive"));
            }
            let tnodes = spec.time_nodes(t_max);
            let mut total = Vec3::zero();
            let mut count = 0;
            for (s, ws) in tnodes {
                let nodes = two_center_rule(x, &c, &[s.sqrt()], support, outer, spec);
                count += nodes.len();
                let v = node_sum(&nodes, |y| {
                    let g = src.sample(t - s, y)?;
                    Ok(V::contract_time(s, x, y, &g))
                })?;
                total += v * ws;
            }
            let tail = if horizon.is_some() {
                0.0
            } else {
                let c_l = kernel_decay_constant(l);
                let tm = t_max.as_f64();
                let gl = GaussLegendre::<f64>::new(12);
                let br = refine(&[0.0, 30.0], 1.0);
                let time_tail = gl.composite(&br, |v| {
                    let s = tm * v.exp();
                    centered_kernel_mass(s, l, env.power) * s
                });
                c_l * env.constant * time_tail
            };
            let far_c = match kind {
                Kind::Lambda => kernel_decay_constant(0),
                Kind::Theta => kernel_decay_constant(1) / 3.0,
            };
            Ok((total, T::lit(tail + far(far_c)), count))
        }
    }
}

/// Parameters of the convolution estimate
/// `J(x) = int (|x-y| + lambda)^{-b} |x-y|^{-c} (|y| + sqrt t)^{-3-mu} dy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntEstParams {
    pub n: usize,
    pub b: f64,
    pub c: f64,
    pub mu: f64,
    pub lambda: f64,
    pub t: f64,
}

impl IntEstParams {
    pub fn new(b: f64, c: f64, mu: f64, lambda: f64, t: f64) -> Result<Self> {
        if !(b >= 0.0 && c >= 0.0 && b + c < 3.0) {
            return Err(domain(format!("need b, c >= 0 and b + c < 3, got b={b}, c={c}")));
        }
        if !(mu > 0.0 && lambda >= 0.0 && t > 0.0) {
            return Err(domain("need mu > 0, lambda >= 0, t > 0"));
        }
        Ok(IntEstParams { n: 3, b, c, mu, lambda, t })
    }

    /// Right-hand side `sqrt t^{-mu} (|x| + lambda + sqrt t)^{-b} (|x| + sqrt t)^{-c}`.
    pub fn model(&self, r: f64) -> f64 {
        let q = self.t.sqrt();
        q.powf(-self.mu) * (r + self.lambda + q).powf(-self.b) * (r + q).powf(-self.c)
    }
}

/// Rule for `int_lo^hi f(beta) d beta` with `f` possibly singular like a power
/// at `beta = 0`: logarithmic substitution when `lo > 0`.
fn log_panel_integral(lo: f64, hi: f64, extra: &[f64], gl: &GaussLegendre<f64>, f: impl Fn(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo <= 0.0 {
        // power-type integrable singularity at 0: geometric panels toward 0
        let mut br: Vec<f64> = (0..60).map(|k| hi * 0.5f64.powi(k)).collect();
        br.extend(extra.iter().copied());
        let br = clean_breaks(br, 0.0, hi);
        return gl.composite(&br, f);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut pts: Vec<f64> = extra.iter().filter(|e| **e > 0.0).map(|e| e.ln()).collect();
    pts.push(a);
    pts.push(b);
    let br = refine(&clean_breaks(pts, a, b), 1.0);
    gl.composite(&br, |v| {
        let beta = v.exp();
        f(beta) * beta
    })
}

/// `(2 pi / r) int_0^inf da a f(a) int_{|r-a|}^{r+a} beta g(beta) d beta`, the
/// integral of `f(|y|) g(|x - y|)` over `R^3` at `|x| = r`. `scales` are
/// feature lengths of `f` and `g`; `f` must decay at least like `a^{-tail_power}`
/// with the returned tail added analytically as `tail(a_max)`.
pub fn bipolar_integral(
    r: f64,
    scales: &[f64],
    order: usize,
    f: impl Fn(f64) -> f64 + Sync,
    g: impl Fn(f64) -> f64 + Sync,
    tail: impl Fn(f64) -> f64,
) -> f64 {
    let gl = GaussLegendre::<f64>::new(order);
    let big = scales.iter().copied().fold(r, f64::max);
    let small = scales.iter().copied().filter(|s| *s > 0.0).fold(r, f64::min);
    let a_max = 1e6 * big;
    let mut pts: Vec<f64> = Vec::new();
    for k in 1..=45 {
        let h = r * 0.5f64.powi(k);
        pts.push(r - h);
        pts.push(r + h);
    }
    pts.push(r);
    for &s in scales.iter().chain([r].iter()) {
        if s > 0.0 {
            for k in -50..=50 {
                pts.push(s * 2f64.powi(k));
            }
        }
    }
    pts.push(small * 1e-12);
    let br = refine_ratio(&clean_breaks(pts, 0.0, a_max), 2.0);
    let nodes = gl.composite_nodes(&br);
    let mut inner_breaks: Vec<f64> = scales.to_vec();
    inner_breaks.push(r);
    let sum: f64 = nodes
        .par_iter()
        .map(|&(a, w)| {
            let lo = (r - a).abs();
            let hi = r + a;
            let inner = log_panel_integral(lo, hi, &inner_breaks, &gl, |beta| beta * g(beta));
            w * a * f(a) * inner
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    2.0 * std::f64::consts::PI / r * sum + tail(a_max)
}

/// `J(x)` of [`IntEstParams`] by bipolar quadrature.
pub fn int_est_integral(p: &IntEstParams, r: f64, order: usize) -> f64 {
    let q = p.t.sqrt();
    let mut scales = vec![q];
    if p.lambda > 0.0 {
        scales.push(p.lambda);
    }
    let (b, c, mu, lam) = (p.b, p.c, p.mu, p.lambda);
    bipolar_integral(
        r,
        &scales,
        order,
        |a| (a + q).powf(-3.0 - mu),
        |beta| (beta + lam).powf(-b) * beta.powf(-c),
        |a_max| {
            // f ~ a^{-3-mu}, inner ~ 2 r a^{1-b-c}
            let e = mu + b + c;
            4.0 * std::f64::consts::PI * a_max.powf(-e) / e
        },
    )
}

/// Extremal ratios `J(x) / model(x)` over the samples.
pub fn int_est_ratio(p: &IntEstParams, x_samples: &[Vec3<f64>]) -> Result<(f64, f64)> {
    if x_samples.is_empty() {
        return Err(domain("no sample points"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for x in x_samples {
        let r = x.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(domain("sample points must be nonzero and finite"));
        }
        let j = int_est_integral(p, r, 10);
        let j2 = int_est_integral(p, r, 14);
        let rel = (j - j2).abs() / j2.abs();
        if !(rel < 1e-6) {
            return Err(Error::Quadrature(format!(
                "int_est at |x|={r:e}: orders 10/14 give {j:e} / {j2:e} (relative change {rel:e})"
            )));
        }
        let ratio = j2 / p.model(r);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

/// Field wrapper exposing a closure-based space-time tensor source.
pub fn source_from_fn<T: Real, V: FieldValue<T>, F>(f: F) -> FieldHandle<T, V>
where
    F: Fn(T, Vec3<T>) -> V + Send + Sync + 'static,
{
    std::sync::Arc::new(crate::fields::space_time_fn(f))
}

