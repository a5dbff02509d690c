use crate::attn::{softmax_in_place, AttnMatrices, AttnWeights};
use crate::error::{Error, Result};
use crate::flops::WorkCounter;
use crate::matrix::{dot, Matrix, Real};

use super::scoring::{score_vertical_slash, top_k, ScoreMode};
use super::{SparseIndex, SparsityPattern};

/// Top-`k_v` columns and top-`k_s` diagonal offsets by attention mass. The
/// main diagonal is always present; offset 0 consumes one of the `k_s` slots
/// only when it is selected on its own merit.
pub fn build_vertical_slash_index<T: Real>(
    m: &AttnMatrices<T>,
    k_v: usize,
    k_s: usize,
    mode: ScoreMode,
) -> Result<SparseIndex> {
    build_vertical_slash_counted(m, k_v, k_s, mode, None)
}

pub(crate) fn build_vertical_slash_counted<T: Real>(
    m: &AttnMatrices<T>,
    k_v: usize,
    k_s: usize,
    mode: ScoreMode,
    counter: Option<&WorkCounter>,
) -> Result<SparseIndex> {
    SparsityPattern::VerticalSlash { k_v, k_s }.validate(m.n())?;
    let scores = score_vertical_slash(m, mode, counter)?;
    let columns = top_k(&scores.columns, k_v);
    let diagonals = top_k(&scores.diagonals, k_s);
    SparseIndex::new(m.n(), columns, diagonals, None, true)
}

/// Row `g` is the mean of rows `g*b .. min((g+1)*b, N)`; the final block is
/// averaged over its true length.
///
/// # Panics
///
/// If `b == 0`.
pub fn block_mean<T: Real>(x: &Matrix<T>, b: usize) -> Matrix<T> {
    assert!(b >= 1, "block side must be positive");
    let g_count = x.rows().div_ceil(b);
    let mut out = Matrix::zeros(g_count, x.cols());
    for g in 0..g_count {
        let start = g * b;
        let end = ((g + 1) * b).min(x.rows());
        let acc = out.row_mut(g);
        for r in start..end {
            for (a, &v) in acc.iter_mut().zip(x.row(r)) {
                *a = *a + v;
            }
        }
        let inv = T::one() / T::lit((end - start) as f64);
        for a in acc.iter_mut() {
            *a = *a * inv;
        }
    }
    out
}

/// Block-level causal attention over block means: key block `h` is allowed
/// for query block `g` iff `h <= g`.
pub fn block_attention<T: Real>(m: &AttnMatrices<T>, b: usize) -> AttnWeights<T> {
    block_attention_counted(m, b, None)
}

fn block_attention_counted<T: Real>(
    m: &AttnMatrices<T>,
    b: usize,
    counter: Option<&WorkCounter>,
) -> AttnWeights<T> {
    let qb = block_mean(m.q(), b);
    let kb = block_mean(m.k(), b);
    let g_count = qb.rows();
    let scale = m.scale();
    let mut a = Matrix::zeros(g_count, g_count);
    for g in 0..g_count {
        let row = &mut a.row_mut(g)[..=g];
        for (h, x) in row.iter_mut().enumerate() {
            *x = dot(qb.row(g), kb.row(h)) * scale;
        }
        softmax_in_place(row);
    }
    if let Some(c) = counter {
        let d = m.d_head() as u64;
        let g = g_count as u64;
        c.add_scoring(2 * m.n() as u64 * d + g * (g + 1) / 2 * d);
    }
    AttnWeights(a)
}

/// Per query block: the diagonal block plus the `k_b - 1` highest-weighted
/// earlier key blocks.
pub fn build_block_index<T: Real>(
    m: &AttnMatrices<T>,
    b: usize,
    k_b: usize,
) -> Result<SparseIndex> {
    build_block_counted(m, b, k_b, None)
}

pub(crate) fn build_block_counted<T: Real>(
    m: &AttnMatrices<T>,
    b: usize,
    k_b: usize,
    counter: Option<&WorkCounter>,
) -> Result<SparseIndex> {
    if !m.is_causal() {
        return Err(Error::NotCausal);
    }
    SparsityPattern::BlockSparse { block: b, k_b }.validate(m.n())?;
    let a = block_attention_counted(m, b, counter);
    let rows = (0..a.n())
        .map(|g| {
            let mut sel = top_k(&a.row(g)[..g], k_b - 1);
            sel.push(g);
            sel
        })
        .collect();
    SparseIndex::new(m.n(), Vec::new(), Vec::new(), Some((b, rows)), true)
}

/// Causal band of `window` positions plus the first `sinks` columns.
pub fn build_triangular_index(n: usize, window: usize, sinks: usize) -> Result<SparseIndex> {
    SparsityPattern::Triangular { window, sinks }.validate(n)?;
    SparseIndex::new(n, (0..sinks).collect(), (0..window).collect(), None, true)
}

/// Realizes `pattern` against the inputs. `mode` only affects vertical-slash.
pub fn build_index<T: Real>(
    m: &AttnMatrices<T>,
    pattern: &SparsityPattern,
    mode: ScoreMode,
) -> Result<SparseIndex> {
    build_index_counted(m, pattern, mode, None)
}

/// [`build_index`] with scoring work recorded in `counter`.
pub fn build_index_counted<T: Real>(
    m: &AttnMatrices<T>,
    pattern: &SparsityPattern,
    mode: ScoreMode,
    counter: Option<&WorkCounter>,
) -> Result<SparseIndex> {
    match *pattern {
        SparsityPattern::Triangular { window, sinks } => {
            build_triangular_index(m.n(), window, sinks)
        }
        SparsityPattern::VerticalSlash { k_v, k_s } => {
            build_vertical_slash_counted(m, k_v, k_s, mode, counter)
        }
        SparsityPattern::BlockSparse { block, k_b } => build_block_counted(m, block, k_b, counter),
    }
}
