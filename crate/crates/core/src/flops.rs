//! Analytic multiply-accumulate model for each pattern family, and the
//! instrumented counter it is calibrated against.
//!
//! Position counts are nominal: triangular and vertical-slash patterns are
//! modeled as `n` rows times their per-row width, ignoring the truncation of
//! early rows and overlaps between columns and diagonals. Block patterns are
//! counted exactly, since every query block always holds
//! `min(k_b, g + 1)` key blocks.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::Result;
use crate::sparse::SparsityPattern;

/// Predicted (or counted) MACs, split by phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopsEstimate {
    /// Index construction (column/diagonal scoring, block pooling).
    pub scoring: u64,
    /// `q . k` evaluations.
    pub logits: u64,
    /// Weighted value accumulation.
    pub output: u64,
}

impl FlopsEstimate {
    pub fn total(&self) -> u64 {
        self.scoring + self.logits + self.output
    }
}

/// MACs of dense causal attention.
pub fn dense_flops(n: usize, d_h: usize) -> FlopsEstimate {
    let p = (n * (n + 1) / 2 * d_h) as u64;
    FlopsEstimate {
        scoring: 0,
        logits: p,
        output: p,
    }
}

/// Exact causal position count of a block pattern: the diagonal block is
/// always one of the `min(k_b, g + 1)` selected blocks and is triangular,
/// every off-diagonal block is full.
pub fn block_positions(n: usize, block: usize, k_b: usize) -> u64 {
    let g_count = n.div_ceil(block);
    (0..g_count)
        .map(|g| {
            let rows = (block.min(n - g * block)) as u64;
            let off_diag = (k_b.min(g + 1) - 1) as u64;
            rows * (rows + 1) / 2 + off_diag * rows * block as u64
        })
        .sum()
}

/// Nominal attention positions for `p` at length `n`.
pub fn nominal_positions(p: &SparsityPattern, n: usize) -> u64 {
    let n64 = n as u64;
    match *p {
        SparsityPattern::Triangular { window, sinks } => n64 * (window + sinks) as u64,
        SparsityPattern::VerticalSlash { k_v, k_s } => n64 * (k_v + k_s) as u64,
        SparsityPattern::BlockSparse { block, k_b } => block_positions(n, block, k_b),
    }
}

/// Causal positions in the last `q` rows of an `n`-row attention matrix.
pub(crate) fn trailing_rows_positions(n: usize, q: usize) -> u64 {
    let q = q.min(n) as u64;
    let n = n as u64;
    q * n - q * q.saturating_sub(1) / 2
}

/// Predicted MACs of pattern `p` at length `n`, head dimension `d_h`.
///
/// `q_est` is the number of trailing query rows used to score columns and
/// diagonals of a vertical-slash pattern; `0` leaves scoring out of the model.
pub fn estimate_flops(
    p: &SparsityPattern,
    n: usize,
    d_h: usize,
    q_est: usize,
) -> Result<FlopsEstimate> {
    p.validate(n)?;
    let d = d_h as u64;
    let positions = nominal_positions(p, n);
    let scoring = match *p {
        SparsityPattern::Triangular { .. } => 0,
        SparsityPattern::VerticalSlash { .. } => trailing_rows_positions(n, q_est) * d,
        SparsityPattern::BlockSparse { block, .. } => {
            let g = n.div_ceil(block) as u64;
            // two block means plus the block-level causal logits
            2 * n as u64 * d + g * (g + 1) / 2 * d
        }
    };
    Ok(FlopsEstimate {
        scoring,
        logits: positions * d,
        output: positions * d,
    })
}

/// Thread-safe MAC counter threaded through index builders and kernels.
#[derive(Debug, Default)]
pub struct WorkCounter {
    scoring: AtomicU64,
    logits: AtomicU64,
    output: AtomicU64,
}

impl WorkCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add_scoring(&self, macs: u64) {
        self.scoring.fetch_add(macs, Ordering::Relaxed);
    }

    pub(crate) fn add_positions(&self, positions: u64, d_h: usize) {
        let macs = positions * d_h as u64;
        self.logits.fetch_add(macs, Ordering::Relaxed);
        self.output.fetch_add(macs, Ordering::Relaxed);
    }

    /// Logit evaluations performed so far (positions, not MACs).
    pub fn logit_evaluations(&self, d_h: usize) -> u64 {
        self.logits.load(Ordering::Relaxed) / d_h.max(1) as u64
    }

    pub fn snapshot(&self) -> FlopsEstimate {
        FlopsEstimate {
            scoring: self.scoring.load(Ordering::Relaxed),
            logits: self.logits.load(Ordering::Relaxed),
            output: self.output.load(Ordering::Relaxed),
        }
    }
}
