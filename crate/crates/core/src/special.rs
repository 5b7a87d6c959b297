//! Error function for generic scalars.

use crate::scalar::Real;

const SERIES_LIMIT: f64 = 3.0;
const CF_DEPTH: usize = 32;

/// Error function.
pub fn erf<T: Real>(x: T) -> T {
    if x < T::zero() {
        return -erf(-x);
    }
    if x < T::lit(SERIES_LIMIT) {
        erf_series(x)
    } else {
        T::one() - erfc_cf(x)
    }
}

/// Complementary error function.
pub fn erfc<T: Real>(x: T) -> T {
    if x < T::lit(SERIES_LIMIT) {
        T::one() - erf(x)
    } else {
        erfc_cf(x)
    }
}

/// `erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (2n+1)!!`, all terms positive.
fn erf_series<T: Real>(x: T) -> T {
    let x2 = x * x;
    let two = T::lit(2.0);
    let mut term = x;
    let mut sum = x;
    let mut n = 0usize;
    loop {
        n += 1;
        term = term * two * x2 / T::from_count(2 * n + 1);
        sum += term;
        if term <= sum * T::epsilon() * T::lit(0.25) || n > 200 {
            break;
        }
    }
    T::FRAC_2_SQRT_PI() * (-x2).exp() * sum
}

/// Continued fraction `erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`.
fn erfc_cf<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let mut t = x;
    for n in (1..=CF_DEPTH).rev() {
        t = x + T::from_count(n) * half / t;
    }
    (-x * x).exp() * T::FRAC_2_SQRT_PI() * T::lit(0.5) / t
}
