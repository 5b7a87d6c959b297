//! One-dimensional Gauss-Legendre rules and composite integration.

use crate::scalar::Real;

/// Gauss-Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    /// `n`-point rule; nodes are computed in double precision by Newton iteration.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let (x, w) = legendre_f64(n);
        GaussLegendre {
            nodes: x.into_iter().map(T::lit).collect(),
            weights: w.into_iter().map(T::lit).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely to [a, b].
    pub fn mapped(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: T, b: T, mut f: impl FnMut(T) -> T) -> T {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule over consecutive breakpoints.
    pub fn composite(&self, breaks: &[T], mut f: impl FnMut(T) -> T) -> T {
        let mut s = T::zero();
        for p in breaks.windows(2) {
            s += self.integrate(p[0], p[1], &mut f);
        }
        s
    }

    /// Nodes and weights of the composite rule.
    pub fn composite_nodes(&self, breaks: &[T]) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(breaks.len().saturating_sub(1) * self.len());
        for p in breaks.windows(2) {
            out.extend(self.mapped(p[0], p[1]));
        }
        out
    }
}

fn legendre_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_eval(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// P_n(z) and P_n'(z) by the three-term recurrence.
fn legendre_eval(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Sorted, deduplicated breakpoints restricted to `[lo, hi]`, always containing both ends.
pub fn clean_breaks<T: Real>(mut pts: Vec<T>, lo: T, hi: T) -> Vec<T> {
    pts.retain(|p| p.is_finite() && *p > lo && *p < hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    let scale = hi.abs().max(lo.abs()).max(T::min_positive_value());
    let tol = scale * T::epsilon() * T::lit(16.0);
    let mut out: Vec<T> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().is_none_or(|l| p - *l > tol) {
            out.push(p);
        }
    }
    if out.len() == 1 {
        out.push(hi);
    }
    out
}

/// Splits every interval of `breaks` into equal parts no wider than `max_width`.
pub fn refine<T: Real>(breaks: &[T], max_width: T) -> Vec<T> {
    let mut out = Vec::with_capacity(breaks.len());
    for p in breaks.windows(2) {
        let n = ((p[1] - p[0]) / max_width).ceil().to_usize().unwrap_or(1).max(1);
        let h = (p[1] - p[0]) / T::from_count(n);
        for i in 0..n {
            out.push(p[0] + h * T::from_count(i));
        }
    }
    if let Some(&last) = breaks.last() {
        out.push(last);
    }
    out
}

/// Geometric breakpoints `anchor * ratio^k` for `k` in `kmin..=kmax`.
pub fn geometric<T: Real>(anchor: T, ratio: T, kmin: i32, kmax: i32) -> Vec<T> {
    (kmin..=kmax).map(|k| anchor * ratio.powi(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_and_exactness() {
        for n in 1..40 {
            let g = GaussLegendre::<f64>::new(n);
            let s: f64 = g.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            // exact for degree 2n-1
            let deg = 2 * n - 1;
            let v = g.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn breaks_are_sorted_and_clipped() {
        let b = clean_breaks(vec![3.0, 0.5, 0.5, 7.0, -1.0, 1.0], 0.0, 4.0);
        assert_eq!(b, vec![0.0, 0.5, 1.0, 3.0, 4.0]);
    }
}
