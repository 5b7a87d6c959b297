//! Force decomposition `f = f0 + div F`, divergence-free boundary extension on
//! flat and graph charts, and the harmonic flux-carrying part.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fields::{space_fn, space_fn_with_gradient, Field, FieldHandle, SphereRule, Zero};
use crate::linalg::Vec3;
use crate::quadrature::{clean_breaks, refine, GaussLegendre};
use crate::scalar::Real;

/// Smooth step `S(u)` (0 for `u <= 0`, 1 for `u >= 1`) and its derivative.
pub fn smooth_step<T: Real>(u: T) -> (T, T) {
    if u <= T::zero() {
        return (T::zero(), T::zero());
    }
    if u >= T::one() {
        return (T::one(), T::zero());
    }
    let v = T::one() - u;
    let a = (-T::one() / u).exp();
    let b = (-T::one() / v).exp();
    let s = a + b;
    (a / s, a * b * (T::one() / (u * u) + T::one() / (v * v)) / (s * s))
}

/// Telescoping cutoff `psi`: 0 below `-3^{-1/2}`, 1 above `3^{-1/2}`; value and derivative.
pub fn telescoping_cutoff<T: Real>(t: T) -> (T, T) {
    let r1 = T::one() / T::lit(3.0).sqrt();
    let (s, ds) = smooth_step((t + r1) / (r1 + r1));
    (s, ds / (r1 + r1))
}

/// Radial profile equal to 1 on `[0, 1]` and 0 beyond 2.
pub fn dyadic_base<T: Real>(r: T) -> T {
    T::one() - smooth_step(r - T::one()).0
}

/// Dyadic bump `phi(r) = beta(r) - beta(2r)`, supported in `[1/2, 2]`;
/// `sum_k phi(2^{-k} r) = 1` for `r > 0`.
pub fn dyadic_bump<T: Real>(r: T) -> T {
    dyadic_base(r) - dyadic_base(r + r)
}

/// Quadrature settings for [`decompose_force`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompOptions {
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Panel width for line integrals in rescaled piece coordinates.
    pub max_panel: f64,
    /// Sphere rule used for the correction coefficients.
    pub sphere_theta: usize,
    pub sphere_phi: usize,
    /// Panels per dyadic shell for the correction coefficients.
    pub shell_panels: usize,
    /// Dyadic pieces are summed until their bound drops below this fraction of `M <x>^{1-a}`.
    pub tail_tolerance: f64,
    /// Upper bound on the number of dyadic shells.
    pub max_shells: usize,
}

impl Default for DecompOptions {
    fn default() -> Self {
        DecompOptions {
            order: 10,
            max_panel: 0.5,
            sphere_theta: 16,
            sphere_phi: 32,
            shell_panels: 6,
            tail_tolerance: 1e-16,
            max_shells: 240,
        }
    }
}

/// Output of [`decompose_force`].
#[derive(Clone)]
pub struct DecompResult<T: Real> {
    /// Compactly supported part; exactly zero for `|x| >= support_radius`.
    pub f0: FieldHandle<T, T>,
    /// `F = (F_1, F_2, F_3)` with `f = f0 + sum_j d_j F_j`.
    pub flux: FieldHandle<T, Vec3<T>>,
    pub support_radius: T,
    /// Sampled `max |F(x)| <x>^{a-1}` over `1 <= |x| <= 100`.
    pub decay_constant: T,
    /// Deepest dyadic piece used by the decay samples.
    pub dyadic_depth: usize,
    /// `int f` from the shell quadrature.
    pub mass: T,
    /// Correction coefficients `a_k`.
    pub coefficients: Vec<T>,
    core: Arc<Core<T>>,
}

impl<T: Real> DecompResult<T> {
    /// Dyadic piece `f_k` (`k >= 1`), supported in `2^{k-2} <= |x|/L <= 2^{k+1}`, `L = R/2`.
    pub fn piece(&self, k: usize) -> FieldHandle<T, T> {
        let core = self.core.clone();
        Arc::new(space_fn(move |x: Vec3<T>| {
            let s = core.piece_scale(k);
            core.rescaled_piece(k, x * (T::one() / s))
        }))
    }

    /// `F` together with the number of dyadic pieces that contributed.
    pub fn flux_with_depth(&self, x: &Vec3<T>) -> (Vec3<T>, usize) {
        self.core.flux(x)
    }
}

impl<T: Real> std::fmt::Debug for DecompResult<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecompResult")
            .field("support_radius", &self.support_radius)
            .field("decay_constant", &self.decay_constant)
            .field("dyadic_depth", &self.dyadic_depth)
            .field("mass", &self.mass)
            .finish()
    }
}

/// Cached `I_2(z1) = int int f_k dz2 dz3` of one rescaled piece, as a piecewise
/// polynomial on Gauss-Legendre panels, with exact running integrals.
struct Piece<T> {
    breaks: Vec<T>,
    values: Vec<Vec<T>>,
    cumulative: Vec<T>,
}

struct Core<T: Real> {
    f: FieldHandle<T, T>,
    scale: T,
    a: T,
    m: T,
    coef: Vec<T>,
    opts: DecompOptions,
    gl: GaussLegendre<T>,
    bary: Vec<T>,
    pieces: Vec<OnceLock<Piece<T>>>,
    bound_factor: T,
}

const RADII: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

impl<T: Real> Core<T> {
    fn piece_scale(&self, k: usize) -> T {
        self.scale * T::lit(2.0).powi(k as i32)
    }

    fn coef(&self, k: usize) -> T {
        self.coef.get(k).copied().unwrap_or(T::zero())
    }

    /// `f_k(s z)` with `s = L 2^k`, supported in `1/4 <= |z| <= 2`.
    fn rescaled_piece(&self, k: usize, z: Vec3<T>) -> T {
        if k == 0 {
            return T::zero();
        }
        let r = z.norm();
        if r <= T::lit(0.25) || r >= T::lit(2.0) {
            return T::zero();
        }
        let s = self.piece_scale(k);
        let outer = dyadic_bump(r);
        let inner = dyadic_bump(r + r);
        let fv = if outer != T::zero() { self.f.eval(T::zero(), z * s) } else { T::zero() };
        (fv + self.coef(k)) * outer - self.coef(k - 1) * inner
    }

    /// Breakpoints of a line at squared distance `q2` from the origin, on `[lo, hi]`.
    fn line_breaks(&self, q2: T, lo: T, hi: T) -> Vec<T> {
        let mut pts = Vec::with_capacity(8);
        for &rho in &RADII {
            let d = T::lit(rho * rho) - q2;
            if d > T::zero() {
                let c = d.sqrt();
                pts.push(-c);
                pts.push(c);
            }
        }
        refine(&clean_breaks(pts, lo, hi), T::lit(self.opts.max_panel))
    }

    /// `int_{-inf}^{upper} f_k(z1, z2, s) ds`.
    fn integral3(&self, k: usize, z1: T, z2: T, upper: T) -> T {
        let q2 = z1 * z1 + z2 * z2;
        let w2 = T::lit(4.0) - q2;
        if w2 <= T::zero() {
            return T::zero();
        }
        let w = w2.sqrt();
        let hi = upper.min(w);
        if hi <= -w {
            return T::zero();
        }
        let br = self.line_breaks(q2, -w, hi);
        self.gl.composite(&br, |s| self.rescaled_piece(k, Vec3::new(z1, z2, s)))
    }

    /// `int_{-inf}^{upper} I_3(z1, s) ds`.
    fn integral2(&self, k: usize, z1: T, upper: T) -> T {
        let w2 = T::lit(4.0) - z1 * z1;
        if w2 <= T::zero() {
            return T::zero();
        }
        let w = w2.sqrt();
        let hi = upper.min(w);
        if hi <= -w {
            return T::zero();
        }
        let br = self.line_breaks(z1 * z1, -w, hi);
        self.gl.composite(&br, |s| self.integral3(k, z1, s, T::infinity()))
    }

    fn piece_cache(&self, k: usize) -> &Piece<T> {
        self.pieces[k].get_or_init(|| {
            let two = T::lit(2.0);
            let breaks = self.line_breaks(T::zero(), -two, two);
            let mut values = Vec::with_capacity(breaks.len() - 1);
            let mut cumulative = vec![T::zero()];
            for p in breaks.windows(2) {
                let vals: Vec<T> = self.gl.mapped(p[0], p[1]).map(|(z1, _)| self.integral2(k, z1, T::infinity())).collect();
                let integral: T = self.gl.mapped(p[0], p[1]).zip(vals.iter()).map(|((_, w), v)| w * *v).sum();
                cumulative.push(*cumulative.last().expect("non-empty") + integral);
                values.push(vals);
            }
            Piece { breaks, values, cumulative }
        })
    }

    /// Interpolated `I_2` on panel `p` at `z`.
    fn interp(&self, piece: &Piece<T>, p: usize, z: T) -> T {
        let (a, b) = (piece.breaks[p], piece.breaks[p + 1]);
        let u = (z - (a + b) * T::lit(0.5)) / ((b - a) * T::lit(0.5));
        let mut num = T::zero();
        let mut den = T::zero();
        for (i, (&xi, &v)) in self.gl.nodes.iter().zip(piece.values[p].iter()).enumerate() {
            let d = u - xi;
            if d == T::zero() {
                return v;
            }
            let c = self.bary[i] / d;
            num += c * v;
            den += c;
        }
        num / den
    }

    /// Interpolated `I_2(z1)` and its exact running integral from -2.
    fn i2_and_g1(&self, k: usize, z1: T) -> (T, T, T) {
        let piece = self.piece_cache(k);
        let total = *piece.cumulative.last().expect("non-empty");
        let n = piece.breaks.len() - 1;
        if z1 <= piece.breaks[0] {
            return (T::zero(), T::zero(), total);
        }
        if z1 >= piece.breaks[n] {
            return (T::zero(), total, total);
        }
        let p = piece.breaks.windows(2).position(|w| z1 < w[1]).unwrap_or(n - 1);
        let partial: T = self.gl.mapped(piece.breaks[p], z1).map(|(s, w)| w * self.interp(piece, p, s)).sum();
        (self.interp(piece, p, z1), piece.cumulative[p] + partial, total)
    }

    /// `(F_1, F_2, F_3)` of the rescaled piece at `z`.
    fn rescaled_flux(&self, k: usize, z: Vec3<T>) -> Vec3<T> {
        let two = T::lit(2.0);
        if z.max_abs() >= two {
            return Vec3::zero();
        }
        let (p1, _) = telescoping_cutoff(z[0]);
        let (p2, d2) = telescoping_cutoff(z[1]);
        let (p3, d3) = telescoping_cutoff(z[2]);
        let g3 = self.integral3(k, z[0], z[1], z[2]);
        let i3 = self.integral3(k, z[0], z[1], T::infinity());
        let f3 = g3 - p3 * i3;
        if d3 == T::zero() {
            return Vec3::new(T::zero(), T::zero(), f3);
        }
        let (i2, g1, total) = self.i2_and_g1(k, z[0]);
        let g2 = self.integral2(k, z[0], z[1]);
        let f2 = d3 * (g2 - p2 * i2);
        let f1 = d2 * d3 * (g1 - p1 * total);
        Vec3::new(f1, f2, f3)
    }

    /// Rough sup bound of `|F_k|` in physical units.
    fn piece_bound(&self, k: usize) -> T {
        let s = self.piece_scale(k);
        let q = s * T::lit(0.25);
        let env = self.m * (T::one() + q * q).powf(-self.a * T::lit(0.5));
        s * self.bound_factor * (env + self.coef(k).abs() + self.coef(k - 1).abs())
    }

    fn flux(&self, x: &Vec3<T>) -> (Vec3<T>, usize) {
        let xi = x.max_abs();
        let mut k = 1usize;
        while k + 1 < self.pieces.len() && T::lit(2.0) * self.piece_scale(k) <= xi {
            k += 1;
        }
        let bracket = (T::one() + x.norm2()).sqrt();
        let tol = T::lit(self.opts.tail_tolerance) * self.m * bracket.powf(T::one() - self.a);
        let mut acc = Vec3::zero();
        let mut deepest = 0;
        while k < self.pieces.len() {
            if self.piece_bound(k) < tol {
                break;
            }
            let s = self.piece_scale(k);
            acc += self.rescaled_flux(k, *x * (T::one() / s)) * s;
            deepest = k;
            k += 1;
        }
        (acc, deepest)
    }

    fn f0(&self, x: &Vec3<T>) -> T {
        let r = x.norm() / self.scale;
        if r >= T::lit(2.0) {
            return T::zero();
        }
        let base = dyadic_base(r);
        let fv = if base != T::zero() { self.f.eval(T::zero(), *x) * base } else { T::zero() };
        fv + self.coef(0) * dyadic_bump(r)
    }
}

/// `int phi dx` for the dyadic bump.
fn dyadic_bump_mass<T: Real>(gl: &GaussLegendre<T>) -> T {
    let br = refine(&[T::one(), T::lit(2.0)], T::lit(1.0 / 16.0));
    let shell = gl.composite(&br, |r| dyadic_base(r) * r * r);
    T::lit(7.0 / 8.0) * T::lit(4.0) * T::PI() * (T::lit(1.0 / 3.0) + shell)
}

fn barycentric_weights<T: Real>(nodes: &[T]) -> Vec<T> {
    (0..nodes.len())
        .map(|i| {
            let p = (0..nodes.len()).filter(|&j| j != i).fold(T::one(), |acc, j| acc * (nodes[i] - nodes[j]));
            T::one() / p
        })
        .collect()
}

/// Splits `f` into a part supported in `B_R` and the divergence of a field
/// decaying like `<x>^{1-a}`, given `|f(x)| <= M <x>^{-a}`.
pub fn decompose_force<T: Real>(
    f: FieldHandle<T, T>,
    r: T,
    a: T,
    m: T,
    opts: &DecompOptions,
) -> Result<DecompResult<T>> {
    if !(a > T::lit(3.0)) || !a.is_finite() {
        return Err(domain(format!("decay exponent must exceed 3, got {a}")));
    }
    if !(r > T::zero()) || !r.is_finite() || !(m > T::zero()) || !m.is_finite() {
        return Err(domain("support radius and envelope constant must be positive"));
    }
    if opts.order < 2 || !(opts.max_panel > 0.0) || opts.shell_panels == 0 || opts.max_shells < 2 {
        return Err(domain("invalid decomposition quadrature options"));
    }
    let gl = GaussLegendre::<T>::new(opts.order);
    let sphere = SphereRule::<T>::new(opts.sphere_theta, opts.sphere_phi)?;
    let scale = r * T::lit(0.5);
    let two = T::lit(2.0);

    // enough shells for the envelope tail M (L 2^J)^{3-a} to fall below 1e-17 relative
    let needed = (17.0 * 10f64.log2() / (a.as_f64() - 3.0)).ceil() as usize + 2;
    let shells = needed.clamp(2, opts.max_shells);

    let check = |x: Vec3<T>| -> Result<T> {
        let v = f.eval(T::zero(), x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                node: format!("x=({:e}, {:e}, {:e})", x[0], x[1], x[2]),
            });
        }
        let env = m * (T::one() + x.norm2()).powf(-a * T::lit(0.5));
        if v.abs() > env * T::lit(1.0 + 1e-9) {
            return Err(Error::Contract(format!(
                "|f| = {:e} exceeds envelope {:e} at |x| = {:e}",
                v.abs(),
                env,
                x.norm()
            )));
        }
        Ok(v)
    };
    let shell_average = |rad: T| -> Result<T> {
        let mut s = T::zero();
        for (w, wt) in &sphere.nodes {
            s += check(*w * rad)? * *wt;
        }
        Ok(s * rad * rad)
    };

    let inner_br = refine(&[T::zero(), scale], scale / T::from_count(opts.shell_panels));
    let mut mass = T::zero();
    for (rad, w) in gl.composite_nodes(&inner_br) {
        mass += shell_average(rad)? * w;
    }
    // per shell [L 2^j, L 2^{j+1}]: full mass and mass weighted by 1 - beta(r / (L 2^j))
    let mut full = Vec::with_capacity(shells);
    let mut weighted = Vec::with_capacity(shells);
    for j in 0..shells {
        let lo = scale * two.powi(j as i32);
        let br = refine(&[lo, lo * two], lo / T::from_count(opts.shell_panels));
        let (mut a_full, mut a_w) = (T::zero(), T::zero());
        for (rad, w) in gl.composite_nodes(&br) {
            let v = shell_average(rad)? * w;
            a_full += v;
            a_w += v * (T::one() - dyadic_base(rad / lo));
        }
        full.push(a_full);
        weighted.push(a_w);
    }
    mass += full.iter().copied().sum::<T>();
    let bump_mass = dyadic_bump_mass(&gl);
    let mut coef = vec![T::zero(); shells];
    let mut beyond = T::zero();
    for k in (0..shells).rev() {
        let s = scale * two.powi(k as i32);
        coef[k] = (weighted[k] + beyond) / (s * s * s * bump_mass);
        beyond += full[k];
    }

    // max |psi'| = max S' / (2 R1) = 2 / (2 / sqrt 3)
    let psi_max = T::lit(3.0).sqrt();
    let bound_factor = T::lit(8.0) + T::lit(32.0) * psi_max + T::lit(128.0) * psi_max * psi_max;
    let bary = barycentric_weights(&gl.nodes);
    let n_pieces = shells + 64;
    let core = Arc::new(Core {
        f,
        scale,
        a,
        m,
        coef: coef.clone(),
        opts: opts.clone(),
        gl,
        bary,
        pieces: (0..n_pieces).map(|_| OnceLock::new()).collect(),
        bound_factor,
    });

    let c0 = core.clone();
    let f0: FieldHandle<T, T> = Arc::new(space_fn(move |x: Vec3<T>| c0.f0(&x)));
    let c1 = core.clone();
    let flux: FieldHandle<T, Vec3<T>> = Arc::new(space_fn(move |x: Vec3<T>| c1.flux(&x).0));

    // decay constant from samples on 1 <= |x| <= 100
    let dirs = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 2.0, 2.0) * (1.0 / 3.0),
        Vec3::new(-2.0, 1.0, 2.0) * (1.0 / 3.0),
        Vec3::new(0.6, -0.8, 0.0),
        Vec3::new(0.0, 0.28, 0.96),
    ];
    let mut decay = T::zero();
    let mut depth = 0;
    let n_r = 12;
    for i in 0..n_r {
        let rad = T::lit(100f64.powf(i as f64 / (n_r - 1) as f64));
        for d in &dirs {
            let x = Vec3::<T>::from_f64(d.to_f64()) * rad;
            let (v, k) = core.flux(&x);
            depth = depth.max(k);
            let w = v.norm() * (T::one() + rad * rad).powf((a - T::one()) * T::lit(0.5));
            decay = decay.max(w);
        }
    }
    Ok(DecompResult {
        f0,
        flux,
        support_radius: r,
        decay_constant: decay,
        dyadic_depth: depth,
        mass,
        coefficients: coef,
        core,
    })
}

/// Boundary data on the square `K = (-1, 1)^2`, as a function of `(x1, x2)`;
/// treated as zero outside `K`.
pub type BoundaryData<T> = Arc<dyn Fn(T, T) -> Vec3<T> + Send + Sync>;

/// Graph `x3 = h(x1, x2)` returning `(h, d1 h, d2 h)`.
pub type GraphFn<T> = Arc<dyn Fn(T, T) -> (T, T, T) + Send + Sync>;

/// Quadrature settings for the boundary extension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtensionOptions {
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Radial panels of the mollifier annulus.
    pub radial_panels: usize,
    /// Largest angular panel of the mollifier annulus (radians).
    pub angular_panel: f64,
    /// Panels per axis on `[-1, 1]` for the planar potentials.
    pub plane_panels: usize,
    /// Allowed `|int u3| / int |u3|`.
    pub flux_tolerance: f64,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions {
            order: 10,
            radial_panels: 24,
            angular_panel: std::f64::consts::PI / 8.0,
            plane_panels: 16,
            flux_tolerance: 1e-9,
        }
    }
}

/// Where the extension can be non-zero: `|x'|_inf < half_width` and
/// `0 <= x3 - h(x') < height` (`h = 0` for the flat chart).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSlab {
    pub half_width: f64,
    pub height: f64,
    pub graph: bool,
}

/// Divergence-free extension with its support descriptor, harmonic part and fluxes.
#[derive(Clone)]
pub struct ExtensionResult<T: Real> {
    pub field: FieldHandle<T, Vec3<T>>,
    pub support: SupportSlab,
    /// Harmonic flux-carrying potential (zero for a single flux-free chart).
    pub harmonic: FieldHandle<T, T>,
    /// Component fluxes carried by `harmonic`.
    pub fluxes: Vec<T>,
}

/// Cutoff `chi`: 1 below 1/8, 0 above 1/4; value and derivative.
pub fn chart_cutoff<T: Real>(s: T) -> (T, T) {
    let eighth = T::lit(0.125);
    let (v, d) = smooth_step((s - eighth) / eighth);
    (T::one() - v, -d / eighth)
}

/// Radial mollifier on `R^2` supported in `1/8 <= |xi| <= 1/4` with unit mass:
/// value and radial derivative.
struct Mollifier<T> {
    norm: T,
}

impl<T: Real> Mollifier<T> {
    fn new() -> Self {
        let gl = GaussLegendre::<T>::new(20);
        let br = refine(&[T::lit(0.125), T::lit(0.25)], T::lit(1.0 / 128.0));
        let one = Mollifier { norm: T::one() };
        let mass = gl.composite(&br, |r| one.eval(r).0 * r) * T::lit(2.0) * T::PI();
        Mollifier { norm: T::one() / mass }
    }

    fn eval(&self, rho: T) -> (T, T) {
        let s = (rho - T::lit(0.1875)) * T::lit(16.0);
        if s.abs() >= T::one() {
            return (T::zero(), T::zero());
        }
        let q = T::one() - s * s;
        let v = self.norm * (-T::one() / q).exp();
        (v, v * (-(s + s) / (q * q)) * T::lit(16.0))
    }
}

struct Flat<T: Real> {
    data: BoundaryData<T>,
    gl: GaussLegendre<T>,
    rho_nodes: Vec<(T, T, T, T)>,
    plane: Vec<T>,
    angular_panel: T,
}

fn in_square<T: Real>(a: T, b: T) -> bool {
    a.abs() < T::one() && b.abs() < T::one()
}

impl<T: Real> Flat<T> {
    fn data(&self, a: T, b: T) -> Vec3<T> {
        if in_square(a, b) {
            (self.data)(a, b)
        } else {
            Vec3::zero()
        }
    }

    /// `int_{-1}^{upper} u3(x1, s) ds`.
    fn column(&self, x1: T, upper: T) -> T {
        let hi = upper.min(T::one());
        if hi <= -T::one() || x1.abs() >= T::one() {
            return T::zero();
        }
        let br: Vec<T> = self.plane.iter().copied().filter(|&b| b < hi).chain(std::iter::once(hi)).collect();
        self.gl.composite(&br, |s| self.data(x1, s)[2])
    }

    /// `int_{-1}^{upper} g`, `g(x1) = int u3(x1, s) ds`.
    fn sheet(&self, upper: T) -> T {
        let hi = upper.min(T::one());
        if hi <= -T::one() {
            return T::zero();
        }
        let br: Vec<T> = self.plane.iter().copied().filter(|&b| b < hi).chain(std::iter::once(hi)).collect();
        self.gl.composite(&br, |s| self.column(s, T::infinity()))
    }

    /// Planar potentials `(f^1, f^2)` with `d1 f^1 + d2 f^2 = u3`.
    fn planar(&self, x1: T, x2: T) -> (T, T) {
        if !(x1.abs() <= T::one() && x2.abs() <= T::one()) {
            return (T::zero(), T::zero());
        }
        let (c, dc) = chart_cutoff(x2);
        let g = self.column(x1, T::infinity());
        let f2 = self.column(x1, x2) - g * (T::one() - c);
        let f1 = if dc != T::zero() { -dc * self.sheet(x1) } else { T::zero() };
        (f1, f2)
    }

    /// Mollified moments at height `x3 > 0`: `[N, d3 N, d1 N, d2 N]` of the
    /// first two data components, `N = x3 int u(x' + x3 xi) phi(xi) dxi`.
    fn moments(&self, x1: T, x2: T, x3: T) -> [[T; 2]; 4] {
        let mut out = [[T::zero(); 2]; 4];
        let two_pi = T::PI() * T::lit(2.0);
        for &(rho, w_rho, phi, dphi) in &self.rho_nodes {
            let r = x3 * rho;
            let mut cuts = Vec::with_capacity(8);
            for (c, off) in [(true, x1), (false, x2)] {
                for edge in [-T::one(), T::one()] {
                    let q = (edge - off) / r;
                    if q.abs() < T::one() {
                        let ang = if c { q.acos() } else { q.asin() };
                        let alts = if c { [ang, two_pi - ang] } else { [ang, T::PI() - ang] };
                        for a in alts {
                            cuts.push(if a < T::zero() { a + two_pi } else { a });
                        }
                    }
                }
            }
            let br = refine(&clean_breaks(cuts, T::zero(), two_pi), self.angular_panel);
            for p in br.windows(2) {
                let mid = (p[0] + p[1]) * T::lit(0.5);
                if !in_square(x1 + r * mid.cos(), x2 + r * mid.sin()) {
                    continue;
                }
                for (th, w_th) in self.gl.mapped(p[0], p[1]) {
                    let (sn, cs) = th.sin_cos();
                    let u = (self.data)(x1 + r * cs, x2 + r * sn);
                    let w = w_rho * w_th * rho;
                    for j in 0..2 {
                        let uj = u[j] * w;
                        out[0][j] += uj * phi * x3;
                        out[1][j] -= uj * (phi + rho * dphi);
                        out[2][j] -= uj * dphi * cs;
                        out[3][j] -= uj * dphi * sn;
                    }
                }
            }
        }
        out
    }

    fn eval(&self, x: Vec3<T>) -> Vec3<T> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        if x3 < T::zero() || x3 >= T::lit(0.25) || x1.abs() >= T::lit(1.125) || x2.abs() >= T::lit(1.125) {
            return Vec3::zero();
        }
        if x3 == T::zero() {
            return self.data(x1, x2);
        }
        let (c, dc) = chart_cutoff(x3);
        let mo = self.moments(x1, x2, x3);
        let (f1, f2) = if dc != T::zero() { self.planar(x1, x2) } else { (T::zero(), T::zero()) };
        let u1 = dc * (mo[0][0] - f1) + c * mo[1][0];
        let u2 = dc * (mo[0][1] - f2) + c * mo[1][1];
        let u3 = c * (self.data(x1, x2)[2] - mo[2][0] - mo[3][1]);
        Vec3::new(u1, u2, u3)
    }
}

fn flat_core<T: Real>(u_star: BoundaryData<T>, opts: &ExtensionOptions) -> Result<Flat<T>> {
    if opts.order < 2 || opts.radial_panels == 0 || opts.plane_panels == 0 || !(opts.angular_panel > 0.0) {
        return Err(domain("invalid extension quadrature options"));
    }
    let gl = GaussLegendre::<T>::new(opts.order);
    let moll = Mollifier::<T>::new();
    let rb = refine(&[T::lit(0.125), T::lit(0.25)], T::lit(0.125 / opts.radial_panels as f64));
    let rho_nodes = gl
        .composite_nodes(&rb)
        .into_iter()
        .map(|(r, w)| {
            let (p, dp) = moll.eval(r);
            (r, w, p, dp)
        })
        .collect();
    let plane = refine(&[-T::one(), T::one()], T::lit(2.0 / opts.plane_panels as f64));
    let flat = Flat { data: u_star, gl, rho_nodes, plane, angular_panel: T::lit(opts.angular_panel) };
    let flux = flat.sheet(T::one());
    let gl2 = &flat.gl;
    let l1 = gl2.composite(&flat.plane, |a| gl2.composite(&flat.plane, |b| flat.data(a, b)[2].abs()));
    if !flux.is_finite() {
        return Err(Error::NonFinite { node: "boundary data".into() });
    }
    if flux.abs() > T::lit(opts.flux_tolerance) * l1.max(T::min_positive_value()) {
        return Err(Error::Contract(format!("boundary flux {flux:e} is not zero (int |u3| = {l1:e})")));
    }
    Ok(flat)
}

/// Divergence-free extension of data on `K x {0}` into `x3 > 0`, supported in
/// `(9/8) K x [0, 1/4]`, for data with `int_K u3 = 0`.
pub fn extend_flat<T: Real>(u_star: BoundaryData<T>, opts: &ExtensionOptions) -> Result<ExtensionResult<T>> {
    let flat = Arc::new(flat_core(u_star, opts)?);
    Ok(ExtensionResult {
        field: Arc::new(space_fn(move |x: Vec3<T>| flat.eval(x))),
        support: SupportSlab { half_width: 1.125, height: 0.25, graph: false },
        harmonic: Arc::new(Zero::<T>::new()),
        fluxes: Vec::new(),
    })
}

/// Extension of data on the graph `x3 = h(x')` (fluid above) through the
/// shear `y3 = x3 - h(x')`; `u_star(x1, x2)` is the value at `(x', h(x'))`.
pub fn extend_graph<T: Real>(
    u_star: BoundaryData<T>,
    h: GraphFn<T>,
    opts: &ExtensionOptions,
) -> Result<ExtensionResult<T>> {
    let n = 64;
    for i in 0..=n {
        for j in 0..=n {
            let a = T::lit(-1.0 + 2.0 * i as f64 / n as f64);
            let b = T::lit(-1.0 + 2.0 * j as f64 / n as f64);
            let (v, _, _) = h(a, b);
            if !(v.abs() < T::lit(0.25)) {
                return Err(domain(format!("graph height {v:e} at ({a:e}, {b:e}) must stay below 1/4")));
            }
        }
    }
    let hd = h.clone();
    let sheared: BoundaryData<T> = Arc::new(move |a: T, b: T| {
        let u = u_star(a, b);
        let (_, h1, h2) = hd(a, b);
        Vec3::new(u[0], u[1], u[2] - u[0] * h1 - u[1] * h2)
    });
    let flat = Arc::new(flat_core(sheared, opts)?);
    let field = space_fn(move |x: Vec3<T>| {
        let (v, h1, h2) = h(x[0], x[1]);
        let big = flat.eval(Vec3::new(x[0], x[1], x[2] - v));
        Vec3::new(big[0], big[1], big[2] + big[0] * h1 + big[1] * h2)
    });
    Ok(ExtensionResult {
        field: Arc::new(field),
        support: SupportSlab { half_width: 1.125, height: 0.25, graph: true },
        harmonic: Arc::new(Zero::<T>::new()),
        fluxes: Vec::new(),
    })
}

/// Spherical boundary component with a point inside it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere<T> {
    pub center: Vec3<T>,
    pub radius: T,
    pub interior: Vec3<T>,
}

impl<T: Real> Sphere<T> {
    pub fn new(center: Vec3<T>, radius: T) -> Self {
        Sphere { center, radius, interior: center }
    }
}

/// Harmonic part `H = sum_k g_k / |x - x_k|` and its gradient.
#[derive(Clone)]
pub struct HarmonicPart<T: Real> {
    pub potential: FieldHandle<T, T>,
    pub gradient: FieldHandle<T, Vec3<T>>,
    pub fluxes: Vec<T>,
}

/// `g_k = (1/4 pi) int_{Gamma_k} u_star . N dS`, with `N` the unit normal
/// pointing out of the fluid (into the sphere).
pub fn harmonic_part<T: Real>(
    u_star: &(dyn Fn(usize, Vec3<T>) -> Vec3<T> + Sync),
    surfaces: &[Sphere<T>],
    rule: &SphereRule<T>,
) -> Result<HarmonicPart<T>> {
    for (i, s) in surfaces.iter().enumerate() {
        if !(s.radius > T::zero()) || (s.interior - s.center).norm() >= s.radius {
            return Err(domain(format!("sphere {i}: radius must be positive and the interior point inside")));
        }
        for (j, o) in surfaces.iter().enumerate().skip(i + 1) {
            if (s.center - o.center).norm() <= s.radius + o.radius {
                return Err(domain(format!("spheres {i} and {j} overlap")));
            }
        }
    }
    let four_pi = T::lit(4.0) * T::PI();
    let mut fluxes = Vec::with_capacity(surfaces.len());
    for (k, s) in surfaces.iter().enumerate() {
        let mut acc = T::zero();
        for (w, wt) in &rule.nodes {
            let v = u_star(k, s.center + *w * s.radius);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: format!("sphere {k}") });
            }
            acc -= v.dot(w) * *wt;
        }
        fluxes.push(acc * s.radius * s.radius / four_pi);
    }
    let pts: Vec<(Vec3<T>, T)> = surfaces.iter().zip(fluxes.iter()).map(|(s, g)| (s.interior, *g)).collect();
    let pts_g = pts.clone();
    let value = move |x: Vec3<T>| pts.iter().map(|(c, g)| *g / (x - *c).norm()).sum::<T>();
    let grad = move |x: Vec3<T>| {
        let mut acc = Vec3::zero();
        for (c, g) in &pts_g {
            let d = x - *c;
            let r = d.norm();
            acc += d * (-*g / (r * r * r));
        }
        acc
    };
    let grad2 = grad.clone();
    let potential: FieldHandle<T, T> = Arc::new(space_fn_with_gradient(value, move |x: Vec3<T>| {
        let g = grad2(x);
        [g[0], g[1], g[2]]
    }));
    Ok(HarmonicPart { potential, gradient: Arc::new(space_fn(grad)), fluxes })
}
