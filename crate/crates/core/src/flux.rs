//! Momentum flux `T_ij = p delta_ij + u_i u_j - d_i u_j - d_j u_i - F_ij`, its
//! time-averaged sphere integrals `I_j(rho) = (1/T) int_0^T int_{|x|=rho} T_ij n_i dS dt`,
//! and extraction of the far-field force `b` from a ladder of radii.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::fields::{eval_checked, gradient, Field, SphereRule};
use crate::linalg::{Mat3, Vec3};
use crate::quadrature::{refine, GaussLegendre};
use crate::scalar::Real;

/// Radii, period and rules of a flux computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxConfig {
    pub radii: Vec<f64>,
    /// Period `T` of the fields (any positive value for steady fields).
    pub period: f64,
    /// Trapezoidal time nodes `t_k = k T / n` per period.
    pub time_nodes: usize,
    /// Gauss-Legendre polar points of the sphere rule.
    pub sphere_theta: usize,
    /// Uniform azimuthal points of the sphere rule.
    pub sphere_phi: usize,
    /// Relative spread across radii above which [`extract_b`] flags the ladder.
    pub spread_threshold: f64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig {
            radii: vec![2.0, 4.0, 8.0],
            period: 1.0,
            time_nodes: 1,
            sphere_theta: 32,
            sphere_phi: 64,
            spread_threshold: 1e-2,
        }
    }
}

impl FluxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(domain("radii must be positive"));
        }
        let mut sorted = self.radii.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(domain("radii must be distinct"));
        }
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(domain("period must be positive"));
        }
        if self.time_nodes == 0 || self.sphere_theta == 0 || self.sphere_phi == 0 {
            return Err(domain("time nodes and sphere orders must be positive"));
        }
        Ok(())
    }

    fn times<T: Real>(&self) -> Vec<T> {
        (0..self.time_nodes)
            .map(|k| T::lit(self.period * k as f64 / self.time_nodes as f64))
            .collect()
    }
}

/// `T_ij(t, x)`; `grad u` is analytic when `u` provides it, central differences with
/// step `1e-4 |x|` otherwise.
pub fn momentum_flux_tensor<T, U, P, F>(u: &U, p: &P, f: &F, t: T, x: &Vec3<T>) -> Result<Mat3<T>>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
{
    let h = T::lit(1e-4) * x.norm().max(T::lit(1e-8));
    let uv = eval_checked(u, t, *x)?;
    let pv = eval_checked(p, t, *x)?;
    let fv = eval_checked(f, t, *x)?;
    let g = gradient(u, t, *x, h)?;
    let mut m = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { pv } else { T::zero() };
            m.0[i][j] = delta + uv[i] * uv[j] - g[i][j] - g[j][i] - fv.0[i][j];
        }
    }
    Ok(m)
}

/// `int_{|x|=rho} T_ij(t, x) n_i dS` at one time.
pub fn instantaneous_flux<T, U, P, F>(u: &U, p: &P, f: &F, rho: T, t: T, rule: &SphereRule<T>) -> Result<Vec3<T>>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
{
    let mut acc = Vec3::zero();
    for &(n, w) in &rule.nodes {
        let m = momentum_flux_tensor(u, p, f, t, &(n * rho))?;
        acc += m.apply_t(&n) * w;
    }
    Ok(acc * (rho * rho))
}

/// Time-averaged flux `I(rho)` by the sphere rule and the trapezoidal rule in time.
pub fn flux_integral<T, U, P, F>(u: &U, p: &P, f: &F, rho: T, config: &FluxConfig) -> Result<Vec3<T>>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
{
    Ok(per_time_fluxes(u, p, f, rho, config)?.1)
}

fn per_time_fluxes<T, U, P, F>(u: &U, p: &P, f: &F, rho: T, config: &FluxConfig) -> Result<(Vec<Vec3<T>>, Vec3<T>)>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
{
    config.validate()?;
    if !(rho > T::zero()) {
        return Err(domain("sphere radius must be positive"));
    }
    let rule = SphereRule::new(config.sphere_theta, config.sphere_phi)?;
    let values: Vec<Vec3<T>> = config
        .times::<T>()
        .par_iter()
        .map(|&t| instantaneous_flux(u, p, f, rho, t, &rule))
        .collect::<Result<_>>()?;
    let mut mean = Vec3::zero();
    for v in &values {
        mean += *v;
    }
    Ok((values.clone(), mean * T::from_count(values.len()).recip()))
}

/// One rung of the radii ladder.
#[derive(Clone, Debug, Serialize)]
pub struct FluxRow {
    pub rho: f64,
    pub averaged: [f64; 3],
    /// `(t, I(rho, t))` at each time node.
    pub per_time: Vec<(f64, [f64; 3])>,
}

/// Per-radius values and the extrapolated limit.
#[derive(Clone, Debug, Serialize)]
pub struct FluxTable {
    pub rows: Vec<FluxRow>,
    /// `max |I(rho_i) - I(rho_j)|` over the ladder.
    pub spread: f64,
    /// `spread / |b|` exceeded the configured threshold.
    pub warning: bool,
}

/// Limit of `I(rho)` as `rho -> infinity`, assuming `I(rho) = b + c / rho + ...`
/// (Richardson step on the two largest radii; the single value for one radius).
pub fn extract_b<T, U, P, F>(u: &U, p: &P, f: &F, config: &FluxConfig) -> Result<(Vec3<T>, FluxTable)>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
{
    config.validate()?;
    let mut radii = config.radii.clone();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
    let times = config.times::<f64>();
    let results: Vec<(Vec<Vec3<T>>, Vec3<T>)> = radii
        .par_iter()
        .map(|&r| per_time_fluxes(u, p, f, T::lit(r), config))
        .collect::<Result<_>>()?;
    let n = radii.len();
    let b = if n == 1 {
        results[0].1
    } else {
        let (r1, r2) = (T::lit(radii[n - 2]), T::lit(radii[n - 1]));
        (results[n - 1].1 * r2 - results[n - 2].1 * r1) * (r2 - r1).recip()
    };
    let mut spread = T::zero();
    for a in &results {
        for c in &results {
            spread = spread.max((a.1 - c.1).norm());
        }
    }
    let rows = radii
        .iter()
        .zip(&results)
        .map(|(&rho, (per, avg))| FluxRow {
            rho,
            averaged: avg.to_f64(),
            per_time: times.iter().zip(per).map(|(t, v)| (*t, v.to_f64())).collect(),
        })
        .collect();
    let bn = b.norm();
    let warning = spread > T::lit(config.spread_threshold) * bn.max(T::min_positive_value());
    Ok((b, FluxTable { rows, spread: spread.as_f64(), warning }))
}

/// Divergence-theorem defect `|I(rho_2) - I(rho_1) - (1/T) int_0^T int_{rho_1<|x|<rho_2} f0|`.
pub fn consistency_check<T, U, P, F, G>(
    u: &U,
    p: &P,
    f: &F,
    f0: &G,
    rho1: T,
    rho2: T,
    config: &FluxConfig,
) -> Result<T>
where
    T: Real,
    U: Field<T, Value = Vec3<T>> + ?Sized,
    P: Field<T, Value = T> + ?Sized,
    F: Field<T, Value = Mat3<T>> + ?Sized,
    G: Field<T, Value = Vec3<T>> + ?Sized,
{
    if !(rho2 > rho1 && rho1 > T::zero()) {
        return Err(domain("need 0 < rho1 < rho2"));
    }
    let i1 = flux_integral(u, p, f, rho1, config)?;
    let i2 = flux_integral(u, p, f, rho2, config)?;
    let mass = annulus_integral(f0, rho1, rho2, config)?;
    Ok((i2 - i1 - mass).norm())
}

/// `(1/T) int_0^T int_{rho_1<|x|<rho_2} f0 dx dt` with 16-point Gauss-Legendre panels
/// of width at most `(rho_2 - rho_1) / 16` in the radius.
pub fn annulus_integral<T, G>(f0: &G, rho1: T, rho2: T, config: &FluxConfig) -> Result<Vec3<T>>
where
    T: Real,
    G: Field<T, Value = Vec3<T>> + ?Sized,
{
    config.validate()?;
    let rule = SphereRule::new(config.sphere_theta, config.sphere_phi)?;
    let gl = GaussLegendre::<T>::new(16);
    let br = refine(&[rho1, rho2], (rho2 - rho1) / T::lit(16.0));
    let radial = gl.composite_nodes(&br);
    let times = config.times::<T>();
    let mut acc = Vec3::zero();
    for &t in &times {
        for &(r, wr) in &radial {
            for &(n, wn) in &rule.nodes {
                acc += eval_checked(f0, t, n * r)? * (wr * wn * r * r);
            }
        }
    }
    Ok(acc * T::from_count(times.len()).recip())
}
