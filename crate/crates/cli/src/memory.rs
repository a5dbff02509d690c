//! Analytic attention memory.
//!
//! Heads run one after another, so one head's transient state is in flight
//! at a time. With 4-byte scalars:
//!
//! - dense weights: `ctx^2 * 4`
//! - sparse weights: `positions * (4 + 4)`, a u32 key index plus a weight per
//!   kept position, with positions taken from the pattern's nominal count
//! - inputs and outputs: `3 * H * ctx * d * 4 + ctx * H * d * 4`

use sparse_accel::flops::nominal_positions;
use sparse_accel::SparsityPattern;

use crate::config::{BenchConfig, Method};

pub const SCALAR_BYTES: u64 = 4;
pub const INDEX_BYTES: u64 = 4;

pub const FORMULA: &str = "dense = ctx^2*4 (one head in flight); \
sparse = positions*(4 index + 4 weight); \
both + inputs 3*H*ctx*d*4 + outputs ctx*H*d*4";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub weights: u64,
    pub io: u64,
}

impl MemoryEstimate {
    pub fn total(&self) -> u64 {
        self.weights + self.io
    }
}

pub fn io_bytes(ctx: usize, heads: usize, d_head: usize) -> u64 {
    4 * (heads * ctx * d_head) as u64 * SCALAR_BYTES
}

pub fn dense_weight_bytes(ctx: usize) -> u64 {
    (ctx as u64) * (ctx as u64) * SCALAR_BYTES
}

pub fn sparse_weight_bytes(positions: u64) -> u64 {
    positions * (INDEX_BYTES + SCALAR_BYTES)
}

/// Positions one head keeps under `method` at `ctx`.
///
/// Auto picks per head, so its figure is the density budget
/// `density * ctx (ctx + 1) / 2` rather than any one pattern.
pub fn method_positions(method: Method, ctx: usize, cfg: &BenchConfig) -> u64 {
    let n = ctx as u64;
    match method {
        Method::Dense => n * n,
        Method::Sparse(family) => pattern_positions(&cfg.pattern(family, ctx), ctx),
        Method::Auto => (cfg.density * (n * (n + 1) / 2) as f64).ceil() as u64,
    }
}

pub fn pattern_positions(p: &SparsityPattern, ctx: usize) -> u64 {
    if ctx == 0 {
        return 0;
    }
    nominal_positions(p, ctx)
}

pub fn estimate_attention_memory(method: Method, ctx: usize, cfg: &BenchConfig) -> MemoryEstimate {
    let io = io_bytes(ctx, cfg.heads, cfg.d_head);
    if ctx == 0 {
        return MemoryEstimate { weights: 0, io };
    }
    let weights = match method {
        Method::Dense => dense_weight_bytes(ctx),
        _ => sparse_weight_bytes(method_positions(method, ctx, cfg)),
    };
    MemoryEstimate { weights, io }
}
