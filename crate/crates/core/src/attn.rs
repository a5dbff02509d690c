//! Dense causal attention reference and the numerics shared with the sparse
//! kernels: stable softmax, the causal constraint and matrix norms.
//!
//! The causal mask is never materialized. Excluded positions are skipped when
//! logits are computed, so they never enter the softmax at all.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix, Real};

/// Query, key and value matrices for a single head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMatrices<T> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    causal: bool,
}

impl<T: Real> AttnMatrices<T> {
    /// Validates shapes (all `N x d_h`, `N, d_h >= 1`) and finiteness.
    pub fn new(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>, causal: bool) -> Result<Self> {
        if q.rows() == 0 || q.cols() == 0 {
            return Err(Error::EmptyInput(
                "attention inputs need N >= 1 and d_h >= 1",
            ));
        }
        for (what, m) in [("keys", &k), ("values", &v)] {
            if m.shape() != q.shape() {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: q.shape(),
                    found: m.shape(),
                });
            }
        }
        for (matrix, m) in [("queries", &q), ("keys", &k), ("values", &v)] {
            if let Some((row, col)) = m.find_non_finite() {
                return Err(Error::NonFinite { matrix, row, col });
            }
        }
        Ok(Self { q, k, v, causal })
    }

    pub fn causal(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        Self::new(q, k, v, true)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.q.rows()
    }

    #[inline]
    pub fn d_head(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn k(&self) -> &Matrix<T> {
        &self.k
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    /// `1 / sqrt(d_h)`
    pub fn scale(&self) -> T {
        T::one() / T::lit(self.d_head() as f64).sqrt()
    }

    /// The trailing `len x len` sub-problem: last `len` queries, keys and values.
    pub fn trailing(&self, len: usize) -> Self {
        let n = self.n();
        let start = n - len.min(n);
        Self {
            q: self.q.slice_rows(start, n),
            k: self.k.slice_rows(start, n),
            v: self.v.slice_rows(start, n),
            causal: self.causal,
        }
    }

    pub fn cast<U: Real>(&self) -> AttnMatrices<U> {
        AttnMatrices {
            q: self.q.cast(),
            k: self.k.cast(),
            v: self.v.cast(),
            causal: self.causal,
        }
    }

    pub fn into_parts(self) -> (Matrix<T>, Matrix<T>, Matrix<T>, bool) {
        (self.q, self.k, self.v, self.causal)
    }
}

/// `N x N` row-stochastic attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights<T>(pub(crate) Matrix<T>);

impl<T: Real> AttnWeights<T> {
    pub fn new(a: Matrix<T>) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                what: "attention weights",
                expected: (a.rows(), a.rows()),
                found: a.shape(),
            });
        }
        Ok(Self(a))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }
}

/// `N x d_h` attention output.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnOutput<T>(pub(crate) Matrix<T>);

impl<T: Real> AttnOutput<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }
}

/// Softmax over the non-excluded entries of `logits`; excluded entries are 0.
pub fn softmax_row<T: Real>(logits: &[T], excluded: &[usize]) -> Result<Vec<T>> {
    let mut keep = vec![true; logits.len()];
    for &e in excluded {
        if let Some(k) = keep.get_mut(e) {
            *k = false;
        }
    }
    let max = logits
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&x, _)| x)
        .fold(None, |m: Option<T>, x| Some(m.map_or(x, |m| m.max(x))))
        .ok_or(Error::EmptyRow { row: 0 })?;

    let mut out: Vec<T> = logits
        .iter()
        .zip(&keep)
        .map(|(&x, &k)| if k { (x - max).exp() } else { T::zero() })
        .collect();
    let sum: T = out.iter().copied().sum();
    for x in &mut out {
        *x = *x / sum;
    }
    Ok(out)
}

/// In-place max-subtracted softmax over a compact slice of included logits.
#[inline]
pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    for x in xs.iter_mut() {
        *x = *x * inv;
    }
}

/// Dense softmax attention `softmax(Q K^T / sqrt(d_h)) V`, with positions
/// `j > i` excluded when the inputs are causal.
///
/// Materializes the full `N x N` weight matrix.
pub fn dense_attention<T: Real>(m: &AttnMatrices<T>) -> (AttnWeights<T>, AttnOutput<T>) {
    let n = m.n();
    let d = m.d_head();
    let scale = m.scale();
    let mut a = Matrix::zeros(n, n);
    let mut y = Matrix::zeros(n, d);

    a.as_mut_slice()
        .par_chunks_mut(n)
        .zip(y.as_mut_slice().par_chunks_mut(d))
        .enumerate()
        .for_each(|(i, (w, out))| {
            let len = if m.causal { i + 1 } else { n };
            let qi = m.q.row(i);
            let w = &mut w[..len];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = dot(qi, m.k.row(j)) * scale;
            }
            softmax_in_place(w);
            for (j, &wj) in w.iter().enumerate() {
                axpy(out, wj, m.v.row(j));
            }
        });

    (AttnWeights(a), AttnOutput(y))
}

/// Frobenius norm of `a - b`.
pub fn frob_norm_diff<T: Real>(a: &AttnWeights<T>, b: &AttnWeights<T>) -> Result<T> {
    matrix_frob_diff(&a.0, &b.0)
}

/// Frobenius norm of the difference between two attention outputs. Used
/// when the search is configured with [`ErrorMetric::Output`].
pub fn output_norm_diff<T: Real>(a: &AttnOutput<T>, b: &AttnOutput<T>) -> Result<T> {
    matrix_frob_diff(&a.0, &b.0)
}

fn matrix_frob_diff<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            what: "norm operands",
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let ss: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(ss.sqrt())
}

/// Which quantity the pattern search compares against the dense reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMetric {
    /// Frobenius distance between weight matrices.
    #[default]
    Weights,
    /// Frobenius distance between outputs.
    Output,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m64(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_token_attends_to_itself() {
        let m = AttnMatrices::causal(
            m64(&[&[1.0, 0.0]]),
            m64(&[&[1.0, 0.0]]),
            m64(&[&[3.0, 7.0]]),
        )
        .unwrap();
        let (a, y) = dense_attention(&m);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(y.row(0), &[3.0, 7.0]);
    }

    #[test]
    fn zero_queries_give_uniform_causal_rows() {
        let q = Matrix::zeros(3, 2);
        let k = m64(&[&[0.3, -1.0], &[2.0, 0.5], &[-0.7, 0.1]]);
        let v = m64(&[&[1.0, 2.0], &[4.0, -2.0], &[7.0, 9.0]]);
        let (a, y) = dense_attention(&AttnMatrices::causal(q, k, v).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((a.get(i, j) - want).abs() < 1e-12);
            }
        }
        assert!((y.get(2, 0) - 4.0).abs() < 1e-12);
        assert!((y.get(2, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let err = AttnMatrices::causal(
            Matrix::<f64>::zeros(3, 2),
            Matrix::zeros(3, 2),
            Matrix::zeros(2, 2),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { what: "values", .. }
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut k = Matrix::<f64>::zeros(2, 2);
        k.set(1, 0, f64::NAN);
        let err = AttnMatrices::causal(Matrix::zeros(2, 2), k, Matrix::zeros(2, 2)).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                matrix: "keys",
                row: 1,
                col: 0
            }
        );
    }

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax_row(&[0.0f64, 0.0], &[]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logit_does_not_overflow() {
        let s = softmax_row(&[1000.0f64, 0.0], &[]).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_with_exclusion() {
        let s = softmax_row(&[2.0f64, 5.0, 1.0], &[1]).unwrap();
        let e2 = 2f64.exp();
        let e1 = 1f64.exp();
        let want = [e2 / (e2 + e1), 0.0, e1 / (e2 + e1)];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s[0] - 0.7311).abs() < 1e-4);
        assert!((s[2] - 0.2689).abs() < 1e-4);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn softmax_all_excluded_is_error() {
        let err = softmax_row(&[1.0f64, 2.0], &[0, 1]).unwrap_err();
        assert!(err.to_string().contains("empty attention row"));
    }

    #[test]
    fn frob_of_identical_is_zero() {
        let a = AttnWeights::new(m64(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        assert_eq!(frob_norm_diff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn frob_of_swapped_permutations_is_two() {
        let a = AttnWeights::new(m64(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let b = AttnWeights::new(m64(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(frob_norm_diff(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn frob_dimension_mismatch() {
        let a = AttnWeights::new(Matrix::<f64>::zeros(2, 2)).unwrap();
        let b = AttnWeights::new(Matrix::<f64>::zeros(3, 3)).unwrap();
        assert!(frob_norm_diff(&a, &b).is_err());
    }

    #[test]
    fn non_causal_rows_cover_everything() {
        let q = m64(&[&[0.0], &[0.0]]);
        let m = AttnMatrices::new(q.clone(), q.clone(), m64(&[&[1.0], &[3.0]]), false).unwrap();
        let (a, y) = dense_attention(&m);
        assert_eq!(a.get(0, 1), 0.5);
        assert_eq!(y.get(0, 0), 2.0);
    }
}
