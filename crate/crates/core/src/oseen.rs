//! Heat kernel, the non-stationary Stokes tensor `S_ij`, its pressure kernel
//! `Q_j`, and the time transforms of `S` used by the potential operators.
//!
//! With `a = 1/(2 sqrt t)`, `u = a|x|` and `F(u) = erf(u)/u`, the Newtonian
//! potential of `Gamma(t, .)` is `a F(u) / (4 pi)` and
//! `S = a^3 [ (e^{-u^2}/pi^{3/2} + A/(4 pi)) I + (B/(4 pi)) n n^T ]`
//! where `A = F'/u` and `B = F'' - F'/u`.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::quadrature::{clean_breaks, refine, GaussLegendre};
use crate::scalar::Real;
use crate::special::erf;

/// Evaluation path for the Newtonian potential of the Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OseenMode {
    #[default]
    ErfClosedForm,
    BruteQuadrature,
}

/// Stateless evaluator for `S_ij(t, x)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OseenTensor {
    pub mode: OseenMode,
}

impl OseenTensor {
    pub fn new(mode: OseenMode) -> Self {
        OseenTensor { mode }
    }

    pub fn eval<T: Real>(&self, t: T, x: &Vec3<T>) -> Result<Mat3<T>> {
        match self.mode {
            OseenMode::ErfClosedForm => oseen_eval(t, x),
            OseenMode::BruteQuadrature => oseen_eval_brute(t, x),
        }
    }
}

/// `(4 pi t)^{-3/2} exp(-|x|^2 / 4t)`.
pub fn heat_kernel<T: Real>(t: T, x: &Vec3<T>) -> Result<T> {
    check_time(t)?;
    let four_t = T::lit(4.0) * t;
    Ok((T::PI() * four_t).powf(T::lit(-1.5)) * (-x.norm2() / four_t).exp())
}

fn check_time<T: Real>(t: T) -> Result<()> {
    if t > T::zero() && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time must be positive and finite, got {t}")))
    }
}

fn check_point<T: Real>(x: &Vec3<T>) -> Result<T> {
    if !x.is_finite() {
        return Err(domain("non-finite evaluation point"));
    }
    let r = x.norm();
    if r == T::zero() {
        return Err(Error::Singularity("kernel evaluated at x = 0".into()));
    }
    Ok(r)
}

/// Radial coefficients `[A, B, C, D]` of `F(u) = erf(u)/u`:
/// `A = F'/u`, `B = F'' - F'/u`, `C = F''' - 3F''/u + 3F'/u^2`, `D = B/u`.
pub fn erf_coefficients<T: Real>(u: T) -> [T; 4] {
    let k = T::FRAC_2_SQRT_PI();
    if u < T::one() {
        // F = (2/sqrt pi) sum_n c_n u^{2n}, c_n = (-1)^n / (n! (2n+1))
        let u2 = u * u;
        let (mut a, mut b, mut c, mut d) = (T::zero(), T::zero(), T::zero(), T::zero());
        let mut fact = T::one();
        let mut pow = T::one(); // u^{2n-2}
        for n in 1..=24usize {
            let nf = T::from_count(n);
            fact *= nf;
            let sign = if n % 2 == 0 { T::one() } else { -T::one() };
            let cn = sign / (fact * T::from_count(2 * n + 1));
            let two_n = T::lit(2.0) * nf;
            a += two_n * cn * pow;
            if n >= 2 {
                let coef = two_n * (two_n - T::lit(2.0)) * cn;
                b += coef * pow;
                // pow / u = u^{2n-3}, formed without dividing by a small u
                d += coef * pow_odd(u, n);
                if n >= 3 {
                    c += T::lit(8.0) * nf * (nf - T::one()) * (nf - T::lit(2.0)) * cn * pow_odd(u, n);
                }
            }
            pow *= u2;
        }
        [k * a, k * b, k * c, k * d]
    } else {
        let g = k * (-u * u).exp();
        let e = erf(u);
        let u2 = u * u;
        let u3 = u2 * u;
        let u4 = u2 * u2;
        let f1 = g / u - e / u2;
        let f2 = -T::lit(2.0) * g - T::lit(2.0) * g / u2 + T::lit(2.0) * e / u3;
        let f3 = T::lit(4.0) * u * g + T::lit(4.0) * g / u + T::lit(6.0) * g / u3
            - T::lit(6.0) * e / u4;
        let a = f1 / u;
        let b = f2 - a;
        let c = f3 - T::lit(3.0) * f2 / u + T::lit(3.0) * f1 / u2;
        [a, b, c, b / u]
    }
}

/// `u^{2n-3}` for `n >= 2`.
fn pow_odd<T: Real>(u: T, n: usize) -> T {
    u.powi(2 * n as i32 - 3)
}

/// Closed-form `S` and its spatial gradient without argument checks.
/// `x = 0` is allowed (the kernel is smooth there for `t > 0`).
/// Gradient entry `g[l].0[i][j]` is `d_l S_ij`.
pub fn oseen_with_gradient<T: Real>(t: T, x: &Vec3<T>) -> (Mat3<T>, [Mat3<T>; 3]) {
    let a = T::one() / (T::lit(2.0) * t.sqrt());
    let r = x.norm();
    let u = a * r;
    let n = if r > T::zero() { *x * (T::one() / r) } else { Vec3::unit(2) };
    let [ca, cb, cc, cd] = erf_coefficients(u);
    let four_pi = T::lit(4.0) * T::PI();
    let pi32 = T::PI().powf(T::lit(1.5));
    let gauss = (-u * u).exp() / pi32;
    let a3 = a * a * a;
    let a4 = a3 * a;
    let iso = a3 * (gauss + ca / four_pi);
    let aniso = a3 * cb / four_pi;
    let mut s = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            s.0[i][j] = aniso * n[i] * n[j];
        }
        s.0[i][i] += iso;
    }
    let dg = -a4 * T::lit(2.0) * u * gauss;
    let c3 = a4 * cc / four_pi;
    let d3 = a4 * cd / four_pi;
    let mut g = [Mat3::zero(); 3];
    for (l, gl) in g.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = c3 * n[i] * n[j] * n[l];
                let mut sym = T::zero();
                if i == j {
                    v += dg * n[l];
                    sym += n[l];
                }
                if i == l {
                    sym += n[j];
                }
                if j == l {
                    sym += n[i];
                }
                gl.0[i][j] = v + d3 * sym;
            }
        }
    }
    (s, g)
}

/// `S_ij(t, x)` from the erf closed form.
pub fn oseen_eval<T: Real>(t: T, x: &Vec3<T>) -> Result<Mat3<T>> {
    check_time(t)?;
    check_point(x)?;
    Ok(oseen_with_gradient(t, x).0)
}

/// Analytic spatial gradient, `g[l].0[i][j] = d_l S_ij`.
pub fn oseen_gradient<T: Real>(t: T, x: &Vec3<T>) -> Result<[Mat3<T>; 3]> {
    check_time(t)?;
    check_point(x)?;
    Ok(oseen_with_gradient(t, x).1)
}

/// Newtonian potential `N(r) = int Gamma(t, y) / |x - y| dy` at `|x| = r`
/// by quadrature in spherical coordinates about `x`; the angular integral
/// reduces to `(2 pi / r) int d rho int_{|r-rho|}^{r+rho} Gamma(s) s ds`.
pub fn newtonian_potential_quadrature<T: Real>(t: T, r: T) -> T {
    let sq = t.sqrt();
    let cutoff = T::lit(14.0) * sq;
    let gl = GaussLegendre::<T>::new(12);
    let width = T::lit(0.5) * sq;
    let four_t = T::lit(4.0) * t;
    let norm = (T::PI() * four_t).powf(T::lit(-1.5));
    let radial = |s: T| norm * (-s * s / four_t).exp() * s;
    let two_pi = T::lit(2.0) * T::PI();
    if r <= T::zero() {
        // int Gamma(y)/|y| dy = 4 pi int Gamma(s) s ds
        let br = refine(&[T::zero(), cutoff], width);
        return T::lit(2.0) * two_pi * gl.composite(&br, radial);
    }
    let outer = clean_breaks(
        vec![r, (cutoff - r).abs(), r + cutoff],
        T::zero(),
        r + cutoff,
    );
    let outer = refine(&outer, width);
    let inner = |rho: T| {
        let lo = (r - rho).abs();
        let hi = (r + rho).min(cutoff);
        if hi <= lo {
            return T::zero();
        }
        let br = refine(&[lo, hi], width);
        gl.composite(&br, radial)
    };
    two_pi / r * gl.composite(&outer, inner)
}

/// `S_ij` from quadrature of the Newtonian potential followed by
/// Richardson-extrapolated central second differences.
pub fn oseen_eval_brute<T: Real>(t: T, x: &Vec3<T>) -> Result<Mat3<T>> {
    check_time(t)?;
    let r = check_point(x)?;
    let h = T::lit(0.03) * r.min(t.sqrt());
    let pot = |p: Vec3<T>| newtonian_potential_quadrature(t, p.norm());
    let hessian = |h: T| {
        let mut m = Mat3::zero();
        let n0 = pot(*x);
        for i in 0..3 {
            let ei = Vec3::unit(i) * h;
            m.0[i][i] = (pot(*x + ei) - n0 * T::lit(2.0) + pot(*x - ei)) / (h * h);
            for j in 0..i {
                let ej = Vec3::unit(j) * h;
                let v = (pot(*x + ei + ej) - pot(*x + ei - ej) - pot(*x - ei + ej)
                    + pot(*x - ei - ej))
                    / (T::lit(4.0) * h * h);
                m.0[i][j] = v;
                m.0[j][i] = v;
            }
        }
        m
    };
    let coarse = hessian(h);
    let fine = hessian(h * T::lit(0.5));
    let hess = (fine * T::lit(4.0) - coarse) * (T::one() / (T::lit(12.0) * T::PI()));
    Ok(hess + Mat3::diag(heat_kernel(t, x)?))
}

/// Finite-difference derivative `d_x^l d_t^k S`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivTensor<T> {
    pub l: usize,
    pub k: usize,
    /// `l = 0`: `[S]`; `l = 1`: `[d_1 S, d_2 S, d_3 S]`; `l = 2`: `d_i d_j S` at index `3 i + j`.
    pub comps: Vec<Mat3<T>>,
}

impl<T: Real> DerivTensor<T> {
    /// Euclidean norm over all components.
    pub fn norm(&self) -> T {
        self.comps.iter().map(|m| m.frobenius().sq()).sum::<T>().sqrt()
    }
}

/// `d_x^l d_t^k S(t, x)` by central differences of the closed form with
/// steps proportional to `|x| + sqrt t` in space and to `t` in time.
pub fn oseen_derivative<T: Real>(t: T, x: &Vec3<T>, l: usize, k: usize) -> Result<DerivTensor<T>> {
    check_time(t)?;
    let r = check_point(x)?;
    if l > 2 || k > 1 {
        return Err(domain(format!("derivative order (l={l}, k={k}) not supported")));
    }
    let scale = r + t.sqrt();
    let hx = match l {
        2 => T::lit(1e-3) * scale,
        _ => T::lit(1e-4) * scale,
    };
    let ht = T::lit(1e-4) * t;
    let base = |tt: T, p: &Vec3<T>| oseen_with_gradient(tt, p).0;
    let timed = |p: &Vec3<T>| -> Mat3<T> {
        if k == 0 {
            base(t, p)
        } else {
            (base(t + ht, p) - base(t - ht, p)) * (T::one() / (T::lit(2.0) * ht))
        }
    };
    let comps = match l {
        0 => vec![timed(x)],
        1 => (0..3)
            .map(|i| {
                let e = Vec3::unit(i) * hx;
                (timed(&(*x + e)) - timed(&(*x - e))) * (T::one() / (T::lit(2.0) * hx))
            })
            .collect(),
        _ => {
            let c = timed(x);
            let mut out = vec![Mat3::zero(); 9];
            for i in 0..3 {
                let ei = Vec3::unit(i) * hx;
                out[4 * i] = (timed(&(*x + ei)) - c * T::lit(2.0) + timed(&(*x - ei)))
                    * (T::one() / (hx * hx));
                for j in 0..i {
                    let ej = Vec3::unit(j) * hx;
                    let v = (timed(&(*x + ei + ej)) - timed(&(*x + ei - ej))
                        - timed(&(*x - ei + ej))
                        + timed(&(*x - ei - ej)))
                        * (T::one() / (T::lit(4.0) * hx * hx));
                    out[3 * i + j] = v;
                    out[3 * j + i] = v;
                }
            }
            out
        }
    };
    Ok(DerivTensor { l, k, comps })
}

/// Column divergences `sum_i d_i S_ij` from the finite-difference gradient.
pub fn column_divergence<T: Real>(t: T, x: &Vec3<T>) -> Result<Vec3<T>> {
    let d = oseen_derivative(t, x, 1, 0)?;
    let mut out = Vec3::zero();
    for j in 0..3 {
        out[j] = (0..3).map(|i| d.comps[i].0[i][j]).sum();
    }
    Ok(out)
}

/// Spatial factor `x_j / (4 pi |x|^3)` of the pressure kernel; the time factor
/// is a Dirac mass at `t = 0`.
pub fn pressure_kernel_q<T: Real>(x: &Vec3<T>) -> Result<Vec3<T>> {
    let r = check_point(x)?;
    Ok(*x * (T::one() / (T::lit(4.0) * T::PI() * r * r * r)))
}

/// Steady Stokeslet `int_0^inf S(s, x) ds = (I/r + x x^T / r^3) / (8 pi)`.
pub fn stokeslet<T: Real>(x: &Vec3<T>) -> Result<Mat3<T>> {
    let r = check_point(x)?;
    let n = *x * (T::one() / r);
    let c = T::one() / (T::lit(8.0) * T::PI() * r);
    Ok((Mat3::identity() + n.outer(&n)) * c)
}

/// Gradient of the steady Stokeslet, `g[l].0[i][j] = d_l E_ij`.
pub fn stokeslet_gradient<T: Real>(x: &Vec3<T>) -> Result<[Mat3<T>; 3]> {
    let r = check_point(x)?;
    let n = *x * (T::one() / r);
    let c = T::one() / (T::lit(8.0) * T::PI() * r * r);
    let mut g = [Mat3::zero(); 3];
    for (l, gl) in g.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = -T::lit(3.0) * n[i] * n[j] * n[l];
                if i == j {
                    v -= n[l];
                }
                if i == l {
                    v += n[j];
                }
                if j == l {
                    v += n[i];
                }
                gl.0[i][j] = c * v;
            }
        }
    }
    Ok(g)
}

/// Complex 3x3 matrix.
pub type CMat3<T> = [[Complex<T>; 3]; 3];

/// Radial coefficients `[A, B, C, D]` of `h(z) = (1 - e^{-z})/z`, defined as
/// for [`erf_coefficients`] with complex argument.
pub fn frequency_coefficients<T: Real>(z: Complex<T>) -> [Complex<T>; 4] {
    let one = Complex::new(T::one(), T::zero());
    if z.norm() < T::one() {
        // h = sum_n c_n z^n, c_n = (-1)^n / (n+1)!
        let zero = Complex::new(T::zero(), T::zero());
        let (mut a, mut b, mut c) = (zero, zero, zero);
        let zinv = one / z;
        let mut fact = T::one();
        let mut pow = zinv; // z^{n-2}
        for n in 1..=24usize {
            let nf = T::from_count(n);
            fact *= T::from_count(n + 1);
            let sign = if n % 2 == 0 { T::one() } else { -T::one() };
            let cn = sign / fact;
            a = a + pow * (nf * cn);
            let m2 = nf - T::lit(2.0);
            b = b + pow * (nf * m2 * cn);
            c = c + pow * zinv * (nf * m2 * (nf - T::lit(4.0)) * cn);
            pow = pow * z;
        }
        [a, b, c, b * zinv]
    } else {
        let e = (-z).exp();
        let z2 = z * z;
        let z3 = z2 * z;
        let z4 = z2 * z2;
        let one_m = one - e;
        let h1 = e / z - one_m / z2;
        let h2 = -e / z - e * T::lit(2.0) / z2 + one_m * T::lit(2.0) / z3;
        let h3 = e / z + e * T::lit(3.0) / z2 + e * T::lit(6.0) / z3 - one_m * T::lit(6.0) / z4;
        let a = h1 / z;
        let b = h2 - a;
        let c = h3 - h2 * T::lit(3.0) / z + h1 * T::lit(3.0) / z2;
        [a, b, c, b / z]
    }
}

/// One-sided Fourier transform `int_0^inf e^{-i omega s} S(s, x) ds` and its
/// spatial gradient (`g[l][i][j] = d_l`). Uses `k = sqrt(i omega)` with
/// positive real part: the heat part becomes `e^{-k r}/(4 pi r)` and the
/// potential part `(1 - e^{-k r})/(4 pi k^2 r)`.
pub fn frequency_kernel<T: Real>(omega: T, x: &Vec3<T>) -> Result<(CMat3<T>, [CMat3<T>; 3])> {
    let r = check_point(x)?;
    if omega == T::zero() {
        let s = stokeslet(x)?;
        let g = stokeslet_gradient(x)?;
        let lift = |m: &Mat3<T>| m.0.map(|row| row.map(|v| Complex::new(v, T::zero())));
        return Ok((lift(&s), [lift(&g[0]), lift(&g[1]), lift(&g[2])]));
    }
    let k = Complex::new(T::zero(), omega).sqrt();
    let n = *x * (T::one() / r);
    let z = k * r;
    let [ca, cb, cc, cd] = frequency_coefficients(z);
    let four_pi = T::lit(4.0) * T::PI();
    let ez = (-z).exp();
    let heat = ez / (four_pi * r);
    let dheat = -ez * (z + T::one()) / (four_pi * r * r);
    let iso = heat + k * ca / four_pi;
    let aniso = k * cb / four_pi;
    let k2 = k * k / four_pi;
    let zero = Complex::new(T::zero(), T::zero());
    let mut s = [[zero; 3]; 3];
    let mut g = [[[zero; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = aniso * (n[i] * n[j]);
            if i == j {
                s[i][j] = s[i][j] + iso;
            }
            for l in 0..3 {
                let mut v = k2 * cc * (n[i] * n[j] * n[l]);
                let mut sym = T::zero();
                if i == j {
                    v = v + dheat * n[l];
                    sym += n[l];
                }
                if i == l {
                    sym += n[j];
                }
                if j == l {
                    sym += n[i];
                }
                g[l][i][j] = v + k2 * cd * sym;
            }
        }
    }
    Ok((s, g))
}

/// Empirical constant `sup |d_x^l d_t^k S| (|x| + sqrt t)^{3 + l + 2k}` over a
/// log box of `(t, |x|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstant {
    pub l: usize,
    pub k: usize,
    /// Supremum after local refinement around the best grid node.
    pub value: f64,
    /// Maximum over the grid nodes alone.
    pub grid_max: f64,
    pub argmax_t: f64,
    pub argmax_r: f64,
    pub grid_points: usize,
}

/// Log-spaced samples of `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Decay-weighted derivative magnitude at `(t, |x| = r)`; `|S|` is rotation
/// invariant so one direction suffices.
pub fn weighted_derivative(l: usize, k: usize, t: f64, r: f64) -> Result<f64> {
    let x = Vec3::new(r, 0.0, 0.0);
    let d = oseen_derivative(t, &x, l, k)?;
    Ok(d.norm() * (r + t.sqrt()).powi((3 + l + 2 * k) as i32))
}

/// Decay constant over an `n x n` log grid of `(t, |x|)` in
/// `t_range x r_range`. The best node is then refined by a shrinking
/// pattern search inside the box, so the reported supremum does not depend
/// on where the grid lines happen to fall.
pub fn decay_constant(
    l: usize,
    k: usize,
    n: usize,
    t_range: (f64, f64),
    r_range: (f64, f64),
) -> Result<DecayConstant> {
    let ts = log_grid(t_range.0, t_range.1, n);
    let rs = log_grid(r_range.0, r_range.1, n);
    let pts: Vec<(f64, f64)> = ts.iter().flat_map(|&t| rs.iter().map(move |&r| (t, r))).collect();
    let vals: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .map(|&(t, r)| Ok((weighted_derivative(l, k, t, r)?, t, r)))
        .collect::<Result<_>>()?;
    let best = vals
        .iter()
        .copied()
        .fold((f64::NEG_INFINITY, 0.0, 0.0), |acc, v| if v.0 > acc.0 { v } else { acc });
    let grid_max = best.0;
    let (lt0, lt1) = (t_range.0.ln(), t_range.1.ln());
    let (lr0, lr1) = (r_range.0.ln(), r_range.1.ln());
    let mut step = ((lt1 - lt0).max(lr1 - lr0)) / (n.max(2) - 1) as f64;
    let (mut v, mut lt, mut lr) = (best.0, best.1.ln(), best.2.ln());
    for _ in 0..30 {
        let mut moved = false;
        for (dt, dr) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            let ct = (lt + dt * step).clamp(lt0, lt1);
            let cr = (lr + dr * step).clamp(lr0, lr1);
            let cv = weighted_derivative(l, k, ct.exp(), cr.exp())?;
            if cv > v {
                v = cv;
                lt = ct;
                lr = cr;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok(DecayConstant {
        l,
        k,
        value: v,
        grid_max,
        argmax_t: lt.exp(),
        argmax_r: lr.exp(),
        grid_points: pts.len(),
    })
}
