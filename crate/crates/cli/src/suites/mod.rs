//! Verification suites, one per library module, and the subcommand runners
//! that write their CSV and JSON artifacts.

pub mod decomp;
pub mod fields;
pub mod flux;
pub mod landau;
pub mod oseen;
pub mod perturbed;
pub mod potentials;

use std::collections::BTreeMap;
use std::time::Instant;

use nsasym::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::Section;

/// Wall-clock seconds spent per acceptance criterion.
#[derive(Clone, Debug, Default)]
pub struct Timings(pub BTreeMap<u8, f64>);

impl Timings {
    /// Runs `f` and adds its duration to `criterion`.
    pub fn time<R>(&mut self, criterion: u8, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        *self.0.entry(criterion).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    pub fn merge(&mut self, other: Timings) {
        for (k, v) in other.0 {
            *self.0.entry(k).or_insert(0.0) += v;
        }
    }
}

/// Result of one verification suite.
pub struct SuiteOutput {
    pub section: Section,
    pub timings: Timings,
}

/// Sections and grid description produced by a subcommand.
pub struct RunOutput {
    pub sections: Vec<Section>,
    pub grid: Option<String>,
}

/// Error type of the subcommand runners.
pub type RunError = Box<dyn std::error::Error + Send + Sync>;

/// Deterministic generator for a suite, derived from the run seed and a stream tag.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform direction on the unit sphere.
pub fn random_direction(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

/// Largest relative deviation `|a_i - b_i| / |b_i|` of two sequences.
pub fn max_rel(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs.into_iter().fold(0.0, |m, (a, b)| m.max((a - b).abs() / b.abs()))
}

/// Fold that propagates NaN instead of discarding it.
pub fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// `n` log-spaced values in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    nsasym::oseen::log_grid(lo, hi, n)
}

/// Runs every suite in module order.
pub fn verify_all(seed: u64) -> Vec<SuiteOutput> {
    vec![
        fields::verify(seed),
        landau::verify(seed),
        oseen::verify(seed),
        potentials::verify(seed),
        decomp::verify(seed),
        perturbed::verify(seed),
        flux::verify(seed),
    ]
}
