use rayon::prelude::*;

use crate::attn::{softmax_in_place, AttnMatrices, AttnOutput, AttnWeights};
use crate::error::{Error, Result};
use crate::flops::WorkCounter;
use crate::matrix::{axpy, dot, Matrix, Real};

use super::SparseIndex;

fn check<T: Real>(m: &AttnMatrices<T>, idx: &SparseIndex) -> Result<()> {
    if !m.is_causal() {
        return Err(Error::NotCausal);
    }
    if idx.n() != m.n() {
        return Err(Error::InvalidIndex(format!(
            "index realized for n={}, inputs have n={}",
            idx.n(),
            m.n()
        )));
    }
    Ok(())
}

/// Computes one output row over the positions of `idx` in row `i`. Logits are
/// evaluated only at those positions. Returns the position count.
#[inline]
fn attend_row<T: Real>(
    m: &AttnMatrices<T>,
    idx: &SparseIndex,
    i: usize,
    scale: T,
    pos: &mut Vec<usize>,
    logits: &mut Vec<T>,
    out: &mut [T],
) -> Result<usize> {
    idx.row_positions(i, pos);
    if pos.is_empty() {
        return Err(Error::EmptyRow { row: i });
    }
    let qi = m.q().row(i);
    logits.clear();
    logits.extend(pos.iter().map(|&j| dot(qi, m.k().row(j)) * scale));
    softmax_in_place(logits);
    for (&j, &w) in pos.iter().zip(logits.iter()) {
        axpy(out, w, m.v().row(j));
    }
    Ok(pos.len())
}

/// Sparse attention restricted to `idx`, materializing the `N x N` weights.
/// Weights outside the index are exactly zero.
pub fn sparse_attention<T: Real>(
    m: &AttnMatrices<T>,
    idx: &SparseIndex,
) -> Result<(AttnWeights<T>, AttnOutput<T>)> {
    check(m, idx)?;
    let (n, d) = (m.n(), m.d_head());
    let scale = m.scale();
    let mut a = Matrix::zeros(n, n);
    let mut y = Matrix::zeros(n, d);
    a.as_mut_slice()
        .par_chunks_mut(n)
        .zip(y.as_mut_slice().par_chunks_mut(d))
        .enumerate()
        .try_for_each_init(
            || (Vec::new(), Vec::new()),
            |(pos, logits), (i, (w, out))| {
                attend_row(m, idx, i, scale, pos, logits, out)?;
                for (&j, &x) in pos.iter().zip(logits.iter()) {
                    w[j] = x;
                }
                Ok::<_, Error>(())
            },
        )?;
    Ok((AttnWeights(a), AttnOutput(y)))
}

/// Sparse attention restricted to `idx` without materializing weights.
/// Memory beyond the output is one row of scratch per worker.
pub fn sparse_attention_output<T: Real>(
    m: &AttnMatrices<T>,
    idx: &SparseIndex,
    counter: Option<&WorkCounter>,
) -> Result<AttnOutput<T>> {
    check(m, idx)?;
    let d = m.d_head();
    let scale = m.scale();
    let mut y = Matrix::zeros(m.n(), d);
    y.as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each_init(
            || (Vec::new(), Vec::new()),
            |(pos, logits), (i, out)| {
                let count = attend_row(m, idx, i, scale, pos, logits, out)?;
                if let Some(c) = counter {
                    c.add_positions(count as u64, d);
                }
                Ok::<_, Error>(())
            },
        )?;
    Ok(AttnOutput(y))
}

/// Vertical-slash kernel; `idx` must come from columns and diagonals.
pub fn vertical_slash_attention<T: Real>(
    m: &AttnMatrices<T>,
    idx: &SparseIndex,
) -> Result<(AttnWeights<T>, AttnOutput<T>)> {
    if idx.blocks().is_some() {
        return Err(Error::InvalidIndex(
            "vertical-slash kernel given a block index".into(),
        ));
    }
    sparse_attention(m, idx)
}

/// Block-sparse kernel; `idx` must carry a block selection.
pub fn block_sparse_attention<T: Real>(
    m: &AttnMatrices<T>,
    idx: &SparseIndex,
) -> Result<(AttnWeights<T>, AttnOutput<T>)> {
    if idx.blocks().is_none() {
        return Err(Error::InvalidIndex(
            "block-sparse kernel given a non-block index".into(),
        ));
    }
    sparse_attention(m, idx)
}
