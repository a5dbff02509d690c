//! Shared fixtures for the criterion benchmarks.

use sparse_accel::synth::random_head;
use sparse_accel::{AttnMatrices, PatternFamily, SparsityPattern};

/// Nominal density used by every sparse benchmark.
pub const DENSITY: f64 = 0.1;

pub fn head(n: usize, d_head: usize) -> AttnMatrices<f32> {
    random_head(n, d_head, 0x5eed ^ n as u64)
}

pub fn pattern(family: PatternFamily, n: usize) -> SparsityPattern {
    SparsityPattern::at_density(family, n, DENSITY, 64)
}
