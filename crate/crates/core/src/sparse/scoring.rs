use crate::attn::{softmax_in_place, AttnMatrices};
use crate::error::{Error, Result};
use crate::flops::WorkCounter;
use crate::matrix::{dot, Real};

/// How column and diagonal scores are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Sum over every row of the dense causal attention weights.
    Exact,
    /// Sum over the last `q_est` query rows only.
    Estimated { q_est: usize },
}

impl Default for ScoreMode {
    fn default() -> Self {
        ScoreMode::Estimated { q_est: 64 }
    }
}

impl ScoreMode {
    /// Number of trailing rows scored for length `n`.
    pub fn rows(&self, n: usize) -> usize {
        match *self {
            ScoreMode::Exact => n,
            ScoreMode::Estimated { q_est } => q_est.min(n),
        }
    }
}

/// Column sums and diagonal sums of the causal attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalSlashScores<T> {
    /// `columns[j] = sum_i A[i][j]`
    pub columns: Vec<T>,
    /// `diagonals[o] = sum_i A[i][i - o]`
    pub diagonals: Vec<T>,
}

/// Computes both score vectors in one pass over the scored rows.
pub fn score_vertical_slash<T: Real>(
    m: &AttnMatrices<T>,
    mode: ScoreMode,
    counter: Option<&WorkCounter>,
) -> Result<VerticalSlashScores<T>> {
    if !m.is_causal() {
        return Err(Error::NotCausal);
    }
    let n = m.n();
    if let ScoreMode::Estimated { q_est } = mode {
        if q_est == 0 || q_est > n {
            return Err(Error::InvalidPattern {
                pattern: format!("q_est={q_est}"),
                n,
                reason: format!("q_est must be in 1..={n}"),
            });
        }
    }
    let scale = m.scale();
    let mut columns = vec![T::zero(); n];
    let mut diagonals = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let start = n - mode.rows(n);
    for i in start..n {
        let qi = m.q().row(i);
        let row = &mut w[..=i];
        for (j, x) in row.iter_mut().enumerate() {
            *x = dot(qi, m.k().row(j)) * scale;
        }
        softmax_in_place(row);
        for (j, &x) in row.iter().enumerate() {
            columns[j] = columns[j] + x;
            diagonals[i - j] = diagonals[i - j] + x;
        }
    }
    if let Some(c) = counter {
        c.add_scoring(crate::flops::trailing_rows_positions(n, n - start) * m.d_head() as u64);
    }
    Ok(VerticalSlashScores { columns, diagonals })
}

/// Per-column attention mass.
pub fn score_columns<T: Real>(m: &AttnMatrices<T>, mode: ScoreMode) -> Result<Vec<T>> {
    score_vertical_slash(m, mode, None).map(|s| s.columns)
}

/// Per-diagonal-offset attention mass.
pub fn score_diagonals<T: Real>(m: &AttnMatrices<T>, mode: ScoreMode) -> Result<Vec<T>> {
    score_vertical_slash(m, mode, None).map(|s| s.diagonals)
}

/// Indices of the `k` largest scores, ties broken toward the lower index.
/// Returned in ascending index order.
pub fn top_k<T: Real>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}
