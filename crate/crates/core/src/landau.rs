//! Landau solutions: the (-1)-homogeneous axisymmetric stationary flows driven
//! by a point force `b delta_0`, with closed-form pressure.

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fields::{eval_checked, fd_gradient, fd_laplacian, default_step, Field, RadialSphericalGrid};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Lower end of the inversion bracket for `A`.
const A_MIN_OFFSET: f64 = 1e-12;
/// Upper end of the inversion bracket for `A`.
const A_MAX: f64 = 1e12;
/// Above this `A` the relation is evaluated from its Laurent series in `1/A`.
const SERIES_SWITCH: f64 = 2.0;

/// `|b|` as a function of the profile parameter `A > 1`.
pub fn b_of_a<T: Real>(a: T) -> Result<T> {
    if !(a > T::one()) {
        return Err(domain(format!("A must exceed 1, got {a}")));
    }
    let sixteen_pi = T::lit(16.0) * T::PI();
    if a.is_infinite() {
        return Ok(T::zero());
    }
    if a >= T::lit(SERIES_SWITCH) {
        // sum_{k>=1} A^{1-2k} (4/3 - 1/(2k+1))
        let inv2 = (a * a).recip();
        let mut pow = a.recip();
        let mut sum = T::zero();
        for k in 1..200usize {
            let term = pow * (T::lit(4.0 / 3.0) - T::one() / T::from_count(2 * k + 1));
            sum += term;
            if term.abs() <= sum.abs() * T::epsilon() * T::lit(0.1) {
                break;
            }
            pow = pow * inv2;
        }
        return Ok(sixteen_pi * sum);
    }
    let am1 = a - T::one();
    let ap1 = a + T::one();
    let log_ratio = am1.ln() - ap1.ln();
    let half = T::lit(0.5);
    let val = a + half * a * a * log_ratio + T::lit(4.0) * a / (T::lit(3.0) * am1 * ap1);
    Ok(sixteen_pi * val)
}

/// Derivative of [`b_of_a`] with respect to `A`.
fn db_da<T: Real>(a: T) -> T {
    let am1 = a - T::one();
    let ap1 = a + T::one();
    let q = am1 * ap1;
    let l = am1.ln() - ap1.ln();
    let v = T::one() + a * l + a * a / q - T::lit(4.0 / 3.0) * (a * a + T::one()) / (q * q);
    T::lit(16.0) * T::PI() * v
}

/// Inverts [`b_of_a`]: bisection in `log(A - 1)` over `[1 + 1e-12, 1e12]`, then a Newton polish.
/// Returns `+inf` for `mag_b = 0`.
pub fn a_of_b<T: Real>(mag_b: T, tol: T) -> Result<T> {
    if !(tol > T::zero()) {
        return Err(domain("tolerance must be positive"));
    }
    if !(mag_b >= T::zero()) || !mag_b.is_finite() {
        return Err(domain(format!("|b| must be finite and nonnegative, got {mag_b}")));
    }
    if mag_b == T::zero() {
        return Ok(T::infinity());
    }
    let lo_a = T::one() + T::lit(A_MIN_OFFSET);
    let hi_a = T::lit(A_MAX);
    if mag_b > b_of_a(lo_a)? {
        return Err(domain(format!("|b| = {mag_b} exceeds the bracket")));
    }
    let b_hi = b_of_a(hi_a)?;
    if mag_b <= b_hi {
        // deep in the asymptotic regime |b| = 16 pi / A (1 + O(A^-2))
        return Ok(T::lit(16.0) * T::PI() / mag_b);
    }
    let mut lo = (lo_a - T::one()).ln();
    let mut hi = (hi_a - T::one()).ln();
    for _ in 0..60 {
        let mid = (lo + hi) * T::lit(0.5);
        if b_of_a(T::one() + mid.exp())? > mag_b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut a = T::one() + ((lo + hi) * T::lit(0.5)).exp();
    let res = b_of_a(a)? - mag_b;
    let d = db_da(a);
    if d != T::zero() && d.is_finite() {
        let cand = a - res / d;
        if cand > T::one() {
            let res_c = b_of_a(cand)? - mag_b;
            if res_c.abs() < res.abs() {
                a = cand;
            }
        }
    }
    let res = (b_of_a(a)? - mag_b).abs();
    if res >= tol * mag_b.max(T::one()) {
        return Err(Error::Quadrature(format!(
            "A(|b|) inversion residual {res} above tolerance"
        )));
    }
    Ok(a)
}

/// A Landau solution `(U^b, P^b)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LandauSolution<T> {
    /// Point force.
    pub b: Vec3<T>,
    /// Profile parameter; `+inf` when `b = 0`.
    pub a: T,
    /// `b / |b|`, or `e_3` when `b = 0` (unused then).
    pub axis: Vec3<T>,
    /// Additive pressure constant; zero gives `p -> 0` at infinity.
    pub pressure_offset: T,
}

impl<T: Real> LandauSolution<T> {
    /// Solution with force `b`.
    pub fn from_b(b: Vec3<T>) -> Result<Self> {
        let mag = b.norm();
        let a = a_of_b(mag, T::lit(1e-12).max(T::epsilon() * T::lit(64.0)))?;
        let axis = b.normalized().unwrap_or_else(|| Vec3::unit(2));
        Ok(LandauSolution { b, a, axis, pressure_offset: T::zero() })
    }

    /// Solution with parameter `A` and force direction `axis`.
    pub fn from_a(a: T, axis: Vec3<T>) -> Result<Self> {
        let axis = axis.normalized().ok_or_else(|| domain("axis must be nonzero"))?;
        let mag = b_of_a(a)?;
        Ok(LandauSolution { b: axis * mag, a, axis, pressure_offset: T::zero() })
    }

    /// The trivial solution `b = 0`.
    pub fn zero() -> Self {
        LandauSolution {
            b: Vec3::zero(),
            a: T::infinity(),
            axis: Vec3::unit(2),
            pressure_offset: T::zero(),
        }
    }

    /// Solution along `axis` whose homogeneous norm `sup |x||U(x)|` equals `eps`.
    pub fn with_homogeneous_norm(eps: T, axis: Vec3<T>) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(domain("norm must be positive"));
        }
        let mut lo = T::lit(-20.0);
        let mut hi = T::lit(30.0);
        let probe = |a: T| homogeneous_norm(a);
        if probe(T::one() + lo.exp()) < eps {
            return Err(domain("requested norm too large"));
        }
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            if probe(T::one() + mid.exp()) > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::from_a(T::one() + ((lo + hi) * T::lit(0.5)).exp(), axis)
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_infinite()
    }

    /// `(alpha, beta)` with `U = (2/r)(alpha n + beta e)`; `c` is the cosine to the axis.
    #[inline]
    fn profile(&self, c: T) -> (T, T) {
        let d = self.a - c;
        ((self.a * c - T::one()) / (d * d), d.recip())
    }

    #[inline]
    fn profile_deriv(&self, c: T) -> (T, T) {
        let a = self.a;
        let d = a - c;
        ((a * a + a * c - T::lit(2.0)) / (d * d * d), (d * d).recip())
    }

    /// Velocity `U^b(x)`.
    pub fn eval_velocity(&self, x: Vec3<T>) -> Result<Vec3<T>> {
        let r = x.norm();
        if r == T::zero() {
            return Err(Error::Singularity("Landau velocity at the origin".into()));
        }
        Ok(self.velocity_unchecked(x, r))
    }

    fn velocity_unchecked(&self, x: Vec3<T>, r: T) -> Vec3<T> {
        if self.is_zero() {
            return Vec3::zero();
        }
        let n = x * r.recip();
        let c = n.dot(&self.axis);
        let (al, be) = self.profile(c);
        (n * al + self.axis * be) * (T::lit(2.0) / r)
    }

    /// Pressure `P^b(x)`.
    pub fn eval_pressure(&self, x: Vec3<T>) -> Result<T> {
        let r = x.norm();
        if r == T::zero() {
            return Err(Error::Singularity("Landau pressure at the origin".into()));
        }
        Ok(self.pressure_unchecked(x, r))
    }

    fn pressure_unchecked(&self, x: Vec3<T>, r: T) -> T {
        if self.is_zero() {
            return self.pressure_offset;
        }
        let c = x.dot(&self.axis) / r;
        let (al, _) = self.profile(c);
        T::lit(4.0) * al / (r * r) + self.pressure_offset
    }

    /// Analytic Jacobian `J[i][j] = d_i U_j`.
    pub fn velocity_gradient(&self, x: Vec3<T>) -> Result<Mat3<T>> {
        let r = x.norm();
        if r == T::zero() {
            return Err(Error::Singularity("Landau gradient at the origin".into()));
        }
        if self.is_zero() {
            return Ok(Mat3::zero());
        }
        let n = x * r.recip();
        let e = self.axis;
        let c = n.dot(&e);
        let (al, be) = self.profile(c);
        let (dal, dbe) = self.profile_deriv(c);
        let s = T::lit(2.0) / (r * r);
        let mut j = Mat3::zero();
        for i in 0..3 {
            let dc = e[i] - c * n[i];
            for k in 0..3 {
                let delta = if i == k { T::one() } else { T::zero() };
                j.0[i][k] = s
                    * (-n[i] * (al * n[k] + be * e[k])
                        + al * (delta - n[i] * n[k])
                        + dc * (dal * n[k] + dbe * e[k]));
            }
        }
        Ok(j)
    }

    /// Analytic pressure gradient.
    pub fn pressure_gradient(&self, x: Vec3<T>) -> Result<Vec3<T>> {
        let r = x.norm();
        if r == T::zero() {
            return Err(Error::Singularity("Landau pressure gradient at the origin".into()));
        }
        if self.is_zero() {
            return Ok(Vec3::zero());
        }
        let n = x * r.recip();
        let c = n.dot(&self.axis);
        let (al, _) = self.profile(c);
        let (dal, _) = self.profile_deriv(c);
        let dc = self.axis - n * c;
        Ok((dc * dal - n * (al + al)) * (T::lit(4.0) / (r * r * r)))
    }

    /// Pressure as a scalar field.
    pub fn pressure(&self) -> LandauPressure<T> {
        LandauPressure(*self)
    }
}

/// `sup_c |x||U|` for the unit-`|x|` profile with parameter `a`, sampled on a fine cosine grid.
fn homogeneous_norm<T: Real>(a: T) -> T {
    let sol = LandauSolution { b: Vec3::zero(), a, axis: Vec3::unit(2), pressure_offset: T::zero() };
    let n = 4001;
    let mut m = T::zero();
    for i in 0..n {
        let c = T::lit(-1.0) + T::lit(2.0) * T::from_count(i) / T::from_count(n - 1);
        let s = (T::one() - c * c).max(T::zero()).sqrt();
        let v = sol.velocity_unchecked(Vec3::new(s, T::zero(), c), T::one());
        m = m.max(v.norm());
    }
    m
}

impl<T: Real> Field<T> for LandauSolution<T> {
    type Value = Vec3<T>;
    fn eval(&self, _t: T, x: Vec3<T>) -> Vec3<T> {
        let r = x.norm();
        if r == T::zero() {
            return Vec3::new(T::nan(), T::nan(), T::nan());
        }
        self.velocity_unchecked(x, r)
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _t: T, x: Vec3<T>) -> Option<[Vec3<T>; 3]> {
        self.velocity_gradient(x).ok().map(|j| [j.row(0), j.row(1), j.row(2)])
    }
}

/// Scalar pressure field of a Landau solution.
#[derive(Clone, Copy, Debug)]
pub struct LandauPressure<T>(pub LandauSolution<T>);

impl<T: Real> Field<T> for LandauPressure<T> {
    type Value = T;
    fn eval(&self, _t: T, x: Vec3<T>) -> T {
        let r = x.norm();
        if r == T::zero() {
            return T::nan();
        }
        self.0.pressure_unchecked(x, r)
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _t: T, x: Vec3<T>) -> Option<[T; 3]> {
        self.0.pressure_gradient(x).ok().map(|g| g.0)
    }
}

/// Step rule for the residual check.
#[derive(Clone, Copy, Debug)]
pub enum Step<T> {
    /// `1e-4 max(1, |x|)`.
    Default,
    /// `h |x|`, which makes the weighted residual scale invariant.
    Relative(T),
}

impl<T: Real> Step<T> {
    pub fn at(&self, x: &Vec3<T>) -> T {
        match *self {
            Step::Default => default_step(x),
            Step::Relative(h) => h * x.norm(),
        }
    }
}

/// Momentum part `-Delta U + (U . grad) U` by pure finite differences.
pub fn momentum_operator<T: Real, F: Field<T, Value = Vec3<T>> + ?Sized>(
    u: &F,
    x: Vec3<T>,
    h: T,
) -> Result<Vec3<T>> {
    let uv = eval_checked(u, T::zero(), x)?;
    let g = fd_gradient(u, T::zero(), x, h)?;
    let lap = fd_laplacian(u, T::zero(), x, h)?;
    let conv = g[0] * uv[0] + g[1] * uv[1] + g[2] * uv[2];
    Ok(conv - lap)
}

/// Weighted residuals `max |x|^3 |-Delta U + (U.grad)U + grad p|` and `max |x|^2 |div U|`.
pub fn landau_residual<T: Real>(sol: &LandauSolution<T>, grid: &RadialSphericalGrid<T>, step: Step<T>) -> Result<(T, T)> {
    if sol.is_zero() {
        return Ok((T::zero(), T::zero()));
    }
    let p = sol.pressure();
    let mut mom = T::zero();
    let mut div = T::zero();
    for (x, _) in grid.nodes() {
        let h = step.at(&x);
        let m = momentum_operator(sol, x, h)?;
        let gp = fd_gradient(&p, T::zero(), x, h)?;
        let g = fd_gradient(sol, T::zero(), x, h)?;
        let r = x.norm();
        mom = mom.max((m + Vec3(gp)).norm() * r * r * r);
        div = div.max((g[0][0] + g[1][1] + g[2][2]).abs() * r * r);
    }
    Ok((mom, div))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spherical_form(a: f64, x: Vec3<f64>) -> Vec3<f64> {
        // (2/r)[(A^2-1)/(A-c)^2 - 1] e_rho - 2 s / (r (A - c)) e_phi, axis e3
        let r = x.norm();
        let c = x[2] / r;
        let rxy = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let s = rxy / r;
        let e_rho = x * (1.0 / r);
        let e_phi = Vec3::new(c * x[0] / rxy, c * x[1] / rxy, -s);
        e_rho * (2.0 / r * ((a * a - 1.0) / (a - c).powi(2) - 1.0)) - e_phi * (2.0 * s / (r * (a - c)))
    }

    #[test]
    fn cartesian_form_matches_spherical_form() {
        let sol = LandauSolution::from_a(2.0, Vec3::unit(2)).unwrap();
        for x in [[1.0, 0.5, -0.3], [0.2, -3.0, 1.0], [-1.0, -1.0, -4.0]] {
            let x = Vec3(x);
            let d = sol.eval_velocity(x).unwrap() - spherical_form(2.0, x);
            assert!(d.norm() < 1e-14);
        }
    }

    #[test]
    fn b_of_a_reference() {
        let b: f64 = b_of_a(2.0).unwrap();
        assert!((b - 34.766_840_318_785_725).abs() < 1e-12);
        let big: f64 = b_of_a(1000.0).unwrap();
        assert!((big / (16.0 * std::f64::consts::PI / 1000.0) - 1.0).abs() < 1e-5);
        assert!(b_of_a(1.0f64).is_err());
    }

    #[test]
    fn series_and_closed_form_agree() {
        for a in [2.0f64, 3.0, 5.0] {
            let am1 = a - 1.0;
            let ap1 = a + 1.0;
            let direct = 16.0
                * std::f64::consts::PI
                * (a + 0.5 * a * a * (am1 / ap1).ln() + 4.0 * a / (3.0 * am1 * ap1));
            let s = b_of_a(a).unwrap();
            assert!((direct / s - 1.0).abs() < 1e-12, "A={a}");
        }
    }

    #[test]
    fn db_da_matches_difference() {
        for a in [1.01f64, 1.5, 3.0] {
            let h = 1e-6 * a;
            let fd = (b_of_a(a + h).unwrap() - b_of_a(a - h).unwrap()) / (2.0 * h);
            assert!((db_da(a) / fd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn inversion_edge_cases() {
        assert!(a_of_b(0.0f64, 1e-12).unwrap().is_infinite());
        assert!(a_of_b(1.0f64, 0.0).is_err());
        let a = a_of_b(b_of_a(1.0001f64).unwrap(), 1e-12).unwrap();
        assert!((a - 1.0001).abs() < 1e-8);
        let tiny = a_of_b(1e-14f64, 1e-12).unwrap();
        assert!(tiny > 1e12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let sol = LandauSolution::<f64>::from_a(1.7, Vec3::new(0.3, -0.4, 0.8)).unwrap();
        let x = Vec3::new(0.9, 0.4, -0.6);
        let ja = sol.velocity_gradient(x).unwrap();
        let jf = fd_gradient(&sol, 0.0, x, 1e-5).unwrap();
        for i in 0..3 {
            assert!((ja.row(i) - jf[i]).norm() < 1e-7 * ja.frobenius());
        }
        let pa = sol.pressure_gradient(x).unwrap();
        let pf = fd_gradient(&sol.pressure(), 0.0, x, 1e-5).unwrap();
        assert!((pa - Vec3(pf)).norm() < 1e-7 * pa.norm());
        assert!(ja.trace().abs() < 1e-13 * ja.frobenius());
    }

    #[test]
    fn homogeneous_norm_constructor() {
        let sol = LandauSolution::<f64>::with_homogeneous_norm(1e-2, Vec3::unit(2)).unwrap();
        let m = homogeneous_norm(sol.a);
        assert!((m - 1e-2).abs() < 1e-12);
        assert!((sol.a - 401.0).abs() < 1.0);
    }

    #[test]
    fn single_precision_evaluation() {
        let s32 = LandauSolution::<f32>::from_a(2.0, Vec3::unit(2)).unwrap();
        let s64 = LandauSolution::<f64>::from_a(2.0, Vec3::unit(2)).unwrap();
        let v32 = s32.eval_velocity(Vec3::new(1.0, 0.5, -0.3)).unwrap();
        let v64 = s64.eval_velocity(Vec3::new(1.0, 0.5, -0.3)).unwrap();
        for i in 0..3 {
            assert!((v32[i] as f64 - v64[i]).abs() < 1e-5);
        }
        assert!((b_of_a(2.0f32).unwrap() - 34.766_84).abs() < 1e-3);
    }
}
