//! Brute-force oracles. Plain `Vec<Vec<f64>>` loops, sharing no code with the
//! library kernels.
#![allow(dead_code)]

use sparse_accel::{AttnMatrices, Matrix};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(m: &Matrix<f64>) -> Mat {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Softmax attention with `allowed(i, j)` deciding which logits survive;
/// excluded logits are set to -inf before a textbook softmax.
pub fn masked_attention(
    m: &AttnMatrices<f64>,
    allowed: impl Fn(usize, usize) -> bool,
) -> (Mat, Mat) {
    let (q, k, v) = (to_mat(m.q()), to_mat(m.k()), to_mat(m.v()));
    let n = q.len();
    let d = q[0].len();
    let mut a = vec![vec![0.0; n]; n];
    let mut y = vec![vec![0.0; d]; n];
    for i in 0..n {
        let mut logits = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            if allowed(i, j) {
                let mut s = 0.0;
                for c in 0..d {
                    s += q[i][c] * k[j][c];
                }
                logits[j] = s / (d as f64).sqrt();
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..n {
            z += (logits[j] - max).exp();
        }
        for j in 0..n {
            a[i][j] = (logits[j] - max).exp() / z;
        }
        for j in 0..n {
            for c in 0..d {
                y[i][c] += a[i][j] * v[j][c];
            }
        }
    }
    (a, y)
}

pub fn naive_attention(m: &AttnMatrices<f64>) -> (Mat, Mat) {
    let causal = m.is_causal();
    masked_attention(m, |i, j| !causal || j <= i)
}

pub fn column_sums(a: &Mat, rows: std::ops::Range<usize>) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|j| rows.clone().map(|i| a[i][j]).sum())
        .collect()
}

pub fn diagonal_sums(a: &Mat, rows: std::ops::Range<usize>) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|o| rows.clone().filter(|&i| i >= o).map(|i| a[i][i - o]).sum())
        .collect()
}

/// Repeated argmax, lowest index on ties.
pub fn brute_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for (j, &s) in scores.iter().enumerate() {
            if taken[j] {
                continue;
            }
            if best.map_or(true, |b| s > scores[b]) {
                best = Some(j);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out.sort();
    out
}

pub fn means(x: &Mat, b: usize) -> Mat {
    x.chunks(b)
        .map(|blk| {
            let d = blk[0].len();
            (0..d)
                .map(|c| blk.iter().map(|r| r[c]).sum::<f64>() / blk.len() as f64)
                .collect()
        })
        .collect()
}

/// Block-level causal softmax over block means.
pub fn block_weights(m: &AttnMatrices<f64>, b: usize) -> Mat {
    let qb = means(&to_mat(m.q()), b);
    let kb = means(&to_mat(m.k()), b);
    let d = qb[0].len() as f64;
    qb.iter()
        .enumerate()
        .map(|(g, qr)| {
            let logits: Vec<f64> = (0..=g)
                .map(|h| qr.iter().zip(&kb[h]).map(|(x, y)| x * y).sum::<f64>() / d.sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let mut row: Vec<f64> = logits.iter().map(|l| (l - max).exp() / z).collect();
            row.resize(qb.len(), 0.0);
            row
        })
        .collect()
}

pub fn frob(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y) * (x - y);
        }
    }
    s.sqrt()
}

pub fn max_abs_diff(a: &Mat, b: &Matrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            worst = worst.max((x - b.get(i, j)).abs());
        }
    }
    worst
}
