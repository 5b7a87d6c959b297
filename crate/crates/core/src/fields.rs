//! Field handles, spherical grids, finite differences and weighted norms.

use std::fmt::Debug;
use std::marker::PhantomData;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::quadrature::GaussLegendre;
use crate::scalar::Real;

/// Number of components carried by a field value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Arity {
    Scalar,
    Vector3,
    Tensor3x3,
}

/// Whether a field depends on time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Domain {
    Space,
    SpaceTime,
}

/// Values a field can take: scalars, 3-vectors or 3x3 tensors.
pub trait FieldValue<T>:
    Copy + Send + Sync + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<T, Output = Self> + 'static
{
    const ARITY: Arity;
    fn zero_value() -> Self;
    /// Euclidean norm (Frobenius for tensors).
    fn magnitude(&self) -> T;
    fn all_finite(&self) -> bool;
    /// Image under the rotation `q` acting on the value's indices.
    fn rotate(&self, q: &Mat3<T>) -> Self;
    fn components(&self) -> Vec<T>;
    /// Divergence from a gradient `[d_1 f, d_2 f, d_3 f]`, defined for vector values.
    fn divergence_of(_grad: &[Self; 3]) -> Option<T> {
        None
    }
}

macro_rules! scalar_value {
    ($t:ty) => {
        impl FieldValue<$t> for $t {
            const ARITY: Arity = Arity::Scalar;
            fn zero_value() -> Self {
                0.0
            }
            fn magnitude(&self) -> $t {
                self.abs()
            }
            fn all_finite(&self) -> bool {
                self.is_finite()
            }
            fn rotate(&self, _q: &Mat3<$t>) -> Self {
                *self
            }
            fn components(&self) -> Vec<$t> {
                vec![*self]
            }
        }
    };
}
scalar_value!(f32);
scalar_value!(f64);

impl<T: Real> FieldValue<T> for Vec3<T> {
    const ARITY: Arity = Arity::Vector3;
    fn zero_value() -> Self {
        Vec3::zero()
    }
    fn magnitude(&self) -> T {
        Vec3::norm(self)
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn rotate(&self, q: &Mat3<T>) -> Self {
        q.apply(self)
    }
    fn components(&self) -> Vec<T> {
        self.0.to_vec()
    }
    fn divergence_of(grad: &[Self; 3]) -> Option<T> {
        Some(grad[0][0] + grad[1][1] + grad[2][2])
    }
}

impl<T: Real> FieldValue<T> for Mat3<T> {
    const ARITY: Arity = Arity::Tensor3x3;
    fn zero_value() -> Self {
        Mat3::zero()
    }
    fn magnitude(&self) -> T {
        self.frobenius()
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn rotate(&self, q: &Mat3<T>) -> Self {
        self.conjugate(q)
    }
    fn components(&self) -> Vec<T> {
        self.0.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// An evaluable field on R^3 or R_+ x R^3. Evaluation is pure.
pub trait Field<T: Real>: Send + Sync {
    type Value: FieldValue<T>;

    fn domain(&self) -> Domain {
        Domain::Space
    }

    /// Value at `(t, x)`; `t` is ignored by spatial fields.
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value;

    /// Whether [`Field::gradient`] returns an analytic value.
    fn has_analytic_gradient(&self) -> bool {
        false
    }

    /// Analytic spatial gradient `[d_1 f, d_2 f, d_3 f]` when available.
    fn gradient(&self, _t: T, _x: Vec3<T>) -> Option<[Self::Value; 3]> {
        None
    }

    fn arity(&self) -> Arity {
        <Self::Value as FieldValue<T>>::ARITY
    }
}

impl<T: Real, F: Field<T> + ?Sized> Field<T> for &F {
    type Value = F::Value;
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value {
        (**self).eval(t, x)
    }
    fn has_analytic_gradient(&self) -> bool {
        (**self).has_analytic_gradient()
    }
    fn gradient(&self, t: T, x: Vec3<T>) -> Option<[Self::Value; 3]> {
        (**self).gradient(t, x)
    }
}

impl<T: Real, F: Field<T> + ?Sized> Field<T> for Arc<F> {
    type Value = F::Value;
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value {
        (**self).eval(t, x)
    }
    fn has_analytic_gradient(&self) -> bool {
        (**self).has_analytic_gradient()
    }
    fn gradient(&self, t: T, x: Vec3<T>) -> Option<[Self::Value; 3]> {
        (**self).gradient(t, x)
    }
}

impl<T: Real, F: Field<T> + ?Sized> Field<T> for Box<F> {
    type Value = F::Value;
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value {
        (**self).eval(t, x)
    }
    fn has_analytic_gradient(&self) -> bool {
        (**self).has_analytic_gradient()
    }
    fn gradient(&self, t: T, x: Vec3<T>) -> Option<[Self::Value; 3]> {
        (**self).gradient(t, x)
    }
}

/// Type-erased shared field handle.
pub type FieldHandle<T, V> = Arc<dyn Field<T, Value = V>>;

/// Spatial field defined by a closure of `x`.
pub struct SpaceFn<F, V> {
    f: F,
    _v: PhantomData<fn() -> V>,
}

/// Space-time field defined by a closure of `(t, x)`.
pub struct SpaceTimeFn<F, V> {
    f: F,
    _v: PhantomData<fn() -> V>,
}

/// Spatial field with an analytic gradient closure.
pub struct SpaceFnWithGradient<F, G, V> {
    f: F,
    g: G,
    _v: PhantomData<fn() -> V>,
}

pub fn space_fn<T, V, F>(f: F) -> SpaceFn<F, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(Vec3<T>) -> V + Send + Sync,
{
    SpaceFn { f, _v: PhantomData }
}

pub fn space_time_fn<T, V, F>(f: F) -> SpaceTimeFn<F, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(T, Vec3<T>) -> V + Send + Sync,
{
    SpaceTimeFn { f, _v: PhantomData }
}

pub fn space_fn_with_gradient<T, V, F, G>(f: F, g: G) -> SpaceFnWithGradient<F, G, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(Vec3<T>) -> V + Send + Sync,
    G: Fn(Vec3<T>) -> [V; 3] + Send + Sync,
{
    SpaceFnWithGradient { f, g, _v: PhantomData }
}

impl<T, V, F> Field<T> for SpaceFn<F, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(Vec3<T>) -> V + Send + Sync,
{
    type Value = V;
    fn eval(&self, _t: T, x: Vec3<T>) -> V {
        (self.f)(x)
    }
}

impl<T, V, F> Field<T> for SpaceTimeFn<F, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(T, Vec3<T>) -> V + Send + Sync,
{
    type Value = V;
    fn domain(&self) -> Domain {
        Domain::SpaceTime
    }
    fn eval(&self, t: T, x: Vec3<T>) -> V {
        (self.f)(t, x)
    }
}

impl<T, V, F, G> Field<T> for SpaceFnWithGradient<F, G, V>
where
    T: Real,
    V: FieldValue<T>,
    F: Fn(Vec3<T>) -> V + Send + Sync,
    G: Fn(Vec3<T>) -> [V; 3] + Send + Sync,
{
    type Value = V;
    fn eval(&self, _t: T, x: Vec3<T>) -> V {
        (self.f)(x)
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _t: T, x: Vec3<T>) -> Option<[V; 3]> {
        Some((self.g)(x))
    }
}

/// The zero field of a given value type.
pub struct Zero<V>(PhantomData<fn() -> V>);

impl<V> Zero<V> {
    pub fn new() -> Self {
        Zero(PhantomData)
    }
}

impl<V> Default for Zero<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real, V: FieldValue<T>> Field<T> for Zero<V> {
    type Value = V;
    fn eval(&self, _t: T, _x: Vec3<T>) -> V {
        V::zero_value()
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _t: T, _x: Vec3<T>) -> Option<[V; 3]> {
        Some([V::zero_value(); 3])
    }
}

/// `a f + b g`.
pub struct Combination<T, F, G> {
    pub a: T,
    pub f: F,
    pub b: T,
    pub g: G,
}

impl<T, F, G> Field<T> for Combination<T, F, G>
where
    T: Real,
    F: Field<T>,
    G: Field<T, Value = F::Value>,
{
    type Value = F::Value;
    fn domain(&self) -> Domain {
        if self.f.domain() == Domain::SpaceTime || self.g.domain() == Domain::SpaceTime {
            Domain::SpaceTime
        } else {
            Domain::Space
        }
    }
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value {
        self.f.eval(t, x) * self.a + self.g.eval(t, x) * self.b
    }
    fn has_analytic_gradient(&self) -> bool {
        self.f.has_analytic_gradient() && self.g.has_analytic_gradient()
    }
    fn gradient(&self, t: T, x: Vec3<T>) -> Option<[Self::Value; 3]> {
        let gf = self.f.gradient(t, x)?;
        let gg = self.g.gradient(t, x)?;
        Some(std::array::from_fn(|i| gf[i] * self.a + gg[i] * self.b))
    }
}

/// Rotated field `x -> R(v(Q^T x))` where `R` is the rotation acting on values.
pub struct Rotated<T, F> {
    pub inner: F,
    pub q: Mat3<T>,
}

impl<T: Real, F: Field<T>> Field<T> for Rotated<T, F> {
    type Value = F::Value;
    fn domain(&self) -> Domain {
        self.inner.domain()
    }
    fn eval(&self, t: T, x: Vec3<T>) -> Self::Value {
        self.inner.eval(t, self.q.apply_t(&x)).rotate(&self.q)
    }
    fn has_analytic_gradient(&self) -> bool {
        self.inner.has_analytic_gradient()
    }
    fn gradient(&self, t: T, x: Vec3<T>) -> Option<[Self::Value; 3]> {
        let g = self.inner.gradient(t, self.q.apply_t(&x))?;
        let rg: [Self::Value; 3] = std::array::from_fn(|l| g[l].rotate(&self.q));
        Some(std::array::from_fn(|i| {
            rg[0] * self.q.0[i][0] + rg[1] * self.q.0[i][1] + rg[2] * self.q.0[i][2]
        }))
    }
}

/// Evaluates `f` and rejects non-finite values.
pub fn eval_checked<T: Real, F: Field<T> + ?Sized>(f: &F, t: T, x: Vec3<T>) -> Result<F::Value> {
    let v = f.eval(t, x);
    if v.all_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            node: format!("t={:e}, x=({:e}, {:e}, {:e})", t, x[0], x[1], x[2]),
        })
    }
}

/// Product rule on the unit sphere: Gauss-Legendre in `cos(polar)` times uniform azimuth.
#[derive(Clone, Debug)]
pub struct SphereRule<T> {
    pub n_theta: usize,
    pub n_phi: usize,
    pub nodes: Vec<(Vec3<T>, T)>,
}

impl<T: Real> SphereRule<T> {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(domain("sphere rule orders must be positive"));
        }
        let gl = GaussLegendre::<T>::new(n_theta);
        let two_pi = T::PI() * T::lit(2.0);
        let dphi = two_pi / T::from_count(n_phi);
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for (&mu, &w) in gl.nodes.iter().zip(gl.weights.iter()) {
            let s = (T::one() - mu * mu).max(T::zero()).sqrt();
            for k in 0..n_phi {
                // (2k + 1) / (2 n_phi) is exact on nested rules
                let phi = two_pi * (T::from_count(2 * k + 1) / T::from_count(2 * n_phi));
                let (sp, cp) = phi.sin_cos();
                nodes.push((Vec3::new(s * cp, s * sp, mu), w * dphi));
            }
        }
        Ok(SphereRule { n_theta, n_phi, nodes })
    }

    pub fn weight_sum(&self) -> T {
        self.nodes.iter().map(|(_, w)| *w).sum()
    }
}

/// Geometric radii times a sphere rule; each node carries its cell volume.
#[derive(Clone, Debug)]
pub struct RadialSphericalGrid<T> {
    pub r_min: T,
    pub r_max: T,
    pub radii: Vec<T>,
    pub sphere: SphereRule<T>,
}

/// Plain-data description of a grid, serialized as `key = value` lines.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridDescriptor {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridDescriptor {
    pub fn to_text(&self) -> String {
        format!(
            "r_min = {:e}\nr_max = {:e}\nn_r = {}\nn_theta = {}\nn_phi = {}\n",
            self.r_min, self.r_max, self.n_r, self.n_theta, self.n_phi
        )
    }
}

impl<T: Real> RadialSphericalGrid<T> {
    pub fn new(r_min: T, r_max: T, n_r: usize, n_theta: usize, n_phi: usize) -> Result<Self> {
        if !(r_min > T::zero()) || !(r_max > r_min) || !r_max.is_finite() {
            return Err(domain("grid needs 0 < r_min < r_max < inf"));
        }
        if n_r < 2 {
            return Err(domain("grid needs at least two radii"));
        }
        // exponents i / (n_r - 1) coincide exactly on nested grids
        let ratio = r_max / r_min;
        let mut radii: Vec<T> = (0..n_r)
            .map(|i| r_min * ratio.powf(T::from_count(i) / T::from_count(n_r - 1)))
            .collect();
        radii[n_r - 1] = r_max;
        Ok(RadialSphericalGrid {
            r_min,
            r_max,
            radii,
            sphere: SphereRule::new(n_theta, n_phi)?,
        })
    }

    /// r in [0.1, 100], 64 radii, 32 x 64 sphere rule.
    pub fn default_grid() -> Self {
        Self::new(T::lit(0.1), T::lit(100.0), 64, 32, 64).expect("valid default grid")
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            r_min: self.r_min.as_f64(),
            r_max: self.r_max.as_f64(),
            n_r: self.radii.len(),
            n_theta: self.sphere.n_theta,
            n_phi: self.sphere.n_phi,
        }
    }

    pub fn len(&self) -> usize {
        self.radii.len() * self.sphere.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes `(x, cell volume)` in radius-major order.
    pub fn nodes(&self) -> Vec<(Vec3<T>, T)> {
        let n = self.radii.len();
        let third = T::one() / T::lit(3.0);
        let mut out = Vec::with_capacity(self.len());
        for (i, &r) in self.radii.iter().enumerate() {
            let lo = if i == 0 { r } else { (r * self.radii[i - 1]).sqrt() };
            let hi = if i + 1 == n { r } else { (r * self.radii[i + 1]).sqrt() };
            let shell = (hi.powi(3) - lo.powi(3)) * third;
            for &(w, wt) in &self.sphere.nodes {
                out.push((w * r, wt * shell));
            }
        }
        out
    }
}

/// `max_x (1+|x|)^k |f(x)|` over the grid nodes.
pub fn xk_norm<T: Real, F: Field<T> + ?Sized>(f: &F, k: T, grid: &RadialSphericalGrid<T>) -> Result<T> {
    let mut m = T::zero();
    for &r in &grid.radii {
        let weight = (T::one() + r).powf(k);
        for &(w, _) in &grid.sphere.nodes {
            let v = eval_checked(f, T::zero(), w * r)?;
            m = m.max(weight * v.magnitude());
        }
    }
    Ok(m)
}

/// Discrete weak-L^q quasi-norm `sup_l l |{|f| >= l}|^(1/q)` from grid cell volumes.
pub fn weak_lq_norm<T: Real, F: Field<T> + ?Sized>(f: &F, q: T, grid: &RadialSphericalGrid<T>) -> Result<T> {
    if !(q > T::one()) {
        return Err(domain("weak-L^q needs q > 1"));
    }
    let mut samples = Vec::with_capacity(grid.len());
    for (x, vol) in grid.nodes() {
        samples.push((eval_checked(f, T::zero(), x)?.magnitude(), vol));
    }
    samples.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
    let inv_q = q.recip();
    let mut best = T::zero();
    let mut measure = T::zero();
    let mut i = 0;
    while i < samples.len() {
        let level = samples[i].0;
        while i < samples.len() && samples[i].0 == level {
            measure += samples[i].1;
            i += 1;
        }
        best = best.max(level * measure.powf(inv_q));
    }
    Ok(best)
}

/// Both grid norms together with the grid description.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub xk_value: f64,
    pub weak_lq_value: f64,
    pub grid_used: GridDescriptor,
}

pub fn norm_report<T: Real, F: Field<T> + ?Sized>(
    f: &F,
    k: T,
    q: T,
    grid: &RadialSphericalGrid<T>,
) -> Result<NormReport> {
    Ok(NormReport {
        xk_value: xk_norm(f, k, grid)?.as_f64(),
        weak_lq_value: weak_lq_norm(f, q, grid)?.as_f64(),
        grid_used: grid.descriptor(),
    })
}

/// Default finite-difference step `1e-4 max(1, |x|)`.
pub fn default_step<T: Real>(x: &Vec3<T>) -> T {
    T::lit(1e-4) * x.norm().max(T::one())
}

/// Requested derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivOrder {
    Grad,
    Div,
    Laplacian,
}

/// Result of [`fd_derivative`].
#[derive(Clone, Copy, Debug)]
pub enum Derivative<T, V> {
    Grad([V; 3]),
    Div(T),
    Laplacian(V),
}

/// Central-difference gradient, ignoring any analytic gradient.
pub fn fd_gradient<T: Real, F: Field<T> + ?Sized>(f: &F, t: T, x: Vec3<T>, h: T) -> Result<[F::Value; 3]> {
    if !(h > T::zero()) {
        return Err(domain("finite-difference step must be positive"));
    }
    let inv = (h + h).recip();
    let mut g = [F::Value::zero_value(); 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let e = Vec3::unit(i) * h;
        let p = eval_checked(f, t, x + e)?;
        let m = eval_checked(f, t, x - e)?;
        *gi = (p - m) * inv;
    }
    Ok(g)
}

/// Gradient: analytic when the field provides one, central differences otherwise.
pub fn gradient<T: Real, F: Field<T> + ?Sized>(f: &F, t: T, x: Vec3<T>, h: T) -> Result<[F::Value; 3]> {
    if f.has_analytic_gradient() {
        if let Some(g) = f.gradient(t, x) {
            if g.iter().all(|v| v.all_finite()) {
                return Ok(g);
            }
            return Err(Error::NonFinite {
                node: format!("gradient at x=({:e}, {:e}, {:e})", x[0], x[1], x[2]),
            });
        }
    }
    fd_gradient(f, t, x, h)
}

/// Laplacian by the 7-point stencil, ignoring any analytic gradient.
pub fn fd_laplacian<T: Real, F: Field<T> + ?Sized>(f: &F, t: T, x: Vec3<T>, h: T) -> Result<F::Value> {
    if !(h > T::zero()) {
        return Err(domain("finite-difference step must be positive"));
    }
    let c = eval_checked(f, t, x)?;
    let inv = (h * h).recip();
    let mut acc = F::Value::zero_value();
    for i in 0..3 {
        let e = Vec3::unit(i) * h;
        let p = eval_checked(f, t, x + e)?;
        let m = eval_checked(f, t, x - e)?;
        acc = acc + (p + m - c - c) * inv;
    }
    Ok(acc)
}

/// Laplacian: central differences of the analytic gradient when available, 7-point stencil otherwise.
pub fn laplacian<T: Real, F: Field<T> + ?Sized>(f: &F, t: T, x: Vec3<T>, h: T) -> Result<F::Value> {
    if !(h > T::zero()) {
        return Err(domain("finite-difference step must be positive"));
    }
    if !f.has_analytic_gradient() {
        return fd_laplacian(f, t, x, h);
    }
    let inv = (h + h).recip();
    let mut acc = F::Value::zero_value();
    for i in 0..3 {
        let e = Vec3::unit(i) * h;
        let gp = f.gradient(t, x + e).ok_or_else(|| domain("gradient unavailable"))?;
        let gm = f.gradient(t, x - e).ok_or_else(|| domain("gradient unavailable"))?;
        acc = acc + (gp[i] - gm[i]) * inv;
    }
    if acc.all_finite() {
        Ok(acc)
    } else {
        Err(Error::NonFinite {
            node: format!("laplacian at x=({:e}, {:e}, {:e})", x[0], x[1], x[2]),
        })
    }
}

/// Divergence of a vector field.
pub fn divergence<T: Real, F: Field<T, Value = Vec3<T>> + ?Sized>(f: &F, t: T, x: Vec3<T>, h: T) -> Result<T> {
    let g = gradient(f, t, x, h)?;
    Ok(g[0][0] + g[1][1] + g[2][2])
}

/// Second-order central derivative of the requested kind.
pub fn fd_derivative<T: Real, F: Field<T> + ?Sized>(
    f: &F,
    order: DerivOrder,
    t: T,
    x: Vec3<T>,
    h: T,
) -> Result<Derivative<T, F::Value>> {
    match order {
        DerivOrder::Grad => Ok(Derivative::Grad(gradient(f, t, x, h)?)),
        DerivOrder::Div => {
            let g = gradient(f, t, x, h)?;
            F::Value::divergence_of(&g)
                .map(Derivative::Div)
                .ok_or_else(|| domain("divergence needs a vector field"))
        }
        DerivOrder::Laplacian => Ok(Derivative::Laplacian(laplacian(f, t, x, h)?)),
    }
}

/// `int_{|x - center| = rho} f dS` by the sphere rule.
pub fn sphere_integral<T: Real, F: Field<T> + ?Sized>(
    f: &F,
    t: T,
    center: Vec3<T>,
    rho: T,
    rule: &SphereRule<T>,
) -> Result<F::Value> {
    if !(rho > T::zero()) {
        return Err(domain("sphere radius must be positive"));
    }
    let area = rho * rho;
    let mut acc = F::Value::zero_value();
    for &(w, wt) in &rule.nodes {
        acc = acc + eval_checked(f, t, center + w * rho)? * (wt * area);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_weights_sum_to_four_pi() {
        for (a, b) in [(8, 16), (16, 32), (32, 64), (9, 7)] {
            let r = SphereRule::<f64>::new(a, b).unwrap();
            assert!((r.weight_sum() / (4.0 * std::f64::consts::PI) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_integral_examples() {
        let rule = SphereRule::<f64>::new(16, 32).unwrap();
        let one = space_fn(|_x: Vec3<f64>| 1.0);
        let v = sphere_integral(&one, 0.0, Vec3::zero(), 3.0, &rule).unwrap();
        assert!((v / (36.0 * std::f64::consts::PI) - 1.0).abs() < 1e-12);
        let odd = space_fn(|x: Vec3<f64>| x[2] / x.norm());
        assert!(sphere_integral(&odd, 0.0, Vec3::zero(), 2.0, &rule).unwrap().abs() < 1e-12);
        let sq = space_fn(|x: Vec3<f64>| (x[2] / x.norm()).powi(2));
        let v = sphere_integral(&sq, 0.0, Vec3::zero(), 2.0, &rule).unwrap();
        assert!((v - 16.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn xk_weight_cancels_envelope() {
        let grid = RadialSphericalGrid::<f64>::new(0.1, 100.0, 16, 4, 8).unwrap();
        let f = space_fn(|x: Vec3<f64>| Vec3::new(1.0 / (1.0 + x.norm()), 0.0, 0.0));
        assert!((xk_norm(&f, 1.0, &grid).unwrap() - 1.0).abs() < 1e-14);
        let z = Zero::<Vec3<f64>>::new();
        assert_eq!(xk_norm(&z, 1.0, &grid).unwrap(), 0.0);
        assert_eq!(weak_lq_norm(&z, 2.0, &grid).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let grid = RadialSphericalGrid::<f64>::new(0.1, 1.0, 4, 2, 2).unwrap();
        let f = space_fn(|x: Vec3<f64>| if x.norm() > 0.5 { f64::NAN } else { 1.0 });
        assert!(matches!(xk_norm(&f, 1.0, &grid), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn fd_examples() {
        let f = space_fn(|x: Vec3<f64>| x[0] * x[0]);
        let l = laplacian(&f, 0.0, Vec3::new(0.3, -1.0, 2.0), 1e-3).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
        let swirl = space_fn(|x: Vec3<f64>| Vec3::new(-x[1], x[0], 0.0) * (1.0 / x.norm2()));
        let d = divergence(&swirl, 0.0, Vec3::new(1.0, 1.0, 1.0), 1e-4).unwrap();
        assert!(d.abs() < 1e-6);
        assert!(matches!(
            fd_derivative(&f, DerivOrder::Div, 0.0, Vec3::zero(), 1e-3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rotated_gradient_matches_fd() {
        let f = space_fn_with_gradient(
            |x: Vec3<f64>| Vec3::new(x[0] * x[1], x[2].sin(), x[0]),
            |x: Vec3<f64>| {
                [
                    Vec3::new(x[1], 0.0, 1.0),
                    Vec3::new(x[0], 0.0, 0.0),
                    Vec3::new(0.0, x[2].cos(), 0.0),
                ]
            },
        );
        let r = Rotated { inner: f, q: Mat3::rotation(Vec3::new(1.0, 0.2, -0.4), 0.9) };
        let x = Vec3::new(0.4, -0.7, 1.1);
        let ga = r.gradient(0.0, x).unwrap();
        let gf = fd_gradient(&r, 0.0, x, 1e-5).unwrap();
        for i in 0..3 {
            assert!((ga[i] - gf[i]).norm() < 1e-8);
        }
    }
}
