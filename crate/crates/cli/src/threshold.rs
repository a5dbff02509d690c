//! Where a sparse method starts beating dense, and how fast each grows.

use std::collections::BTreeMap;

use crate::config::Method;
use crate::sweep::BenchRecord;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub sparse: Method,
    /// Ctx values where both methods have a measured latency.
    pub shared_ctx: Vec<usize>,
    /// Smallest shared ctx with sparse latency strictly below dense.
    pub crossover_ctx: Option<usize>,
    /// Least-squares seconds per token over the top half of `shared_ctx`.
    pub sparse_slope: Option<f64>,
    pub dense_slope: Option<f64>,
}

impl ThresholdReport {
    pub fn flattens(&self) -> bool {
        matches!((self.sparse_slope, self.dense_slope), (Some(s), Some(d)) if s < d)
    }
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Indices `len/2..`, widened to the last two points when that is shorter.
pub fn top_half(len: usize) -> std::ops::Range<usize> {
    (len / 2).min(len.saturating_sub(2))..len
}

fn latencies(records: &[BenchRecord], method: Method) -> BTreeMap<usize, f64> {
    records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.latency_s.map(|l| (r.ctx, l)))
        .collect()
}

/// One report per sparse method present alongside dense.
pub fn find_threshold(records: &[BenchRecord]) -> Result<Vec<ThresholdReport>, HarnessError> {
    let dense = latencies(records, Method::Dense);
    let mut sparse_methods: Vec<Method> = records
        .iter()
        .map(|r| r.method)
        .filter(|m| !m.is_dense())
        .collect();
    sparse_methods.sort();
    sparse_methods.dedup();
    if dense.is_empty() || sparse_methods.is_empty() {
        return Err(HarnessError::Threshold(
            "need dense and at least one sparse method".into(),
        ));
    }

    let mut out = Vec::with_capacity(sparse_methods.len());
    for method in sparse_methods {
        let sparse = latencies(records, method);
        let shared: Vec<usize> = sparse
            .keys()
            .copied()
            .filter(|c| dense.contains_key(c))
            .collect();
        if shared.is_empty() {
            return Err(HarnessError::Threshold(format!(
                "no ctx where both {method} and dense were measured"
            )));
        }
        let crossover_ctx = shared.iter().copied().find(|c| sparse[c] < dense[c]);
        let top = &shared[top_half(shared.len())];
        let fit = |lat: &BTreeMap<usize, f64>| {
            ls_slope(&top.iter().map(|c| (*c as f64, lat[c])).collect::<Vec<_>>())
        };
        out.push(ThresholdReport {
            sparse: method,
            crossover_ctx,
            sparse_slope: fit(&sparse),
            dense_slope: fit(&dense),
            shared_ctx: shared,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparse_accel::PatternFamily;

    const VS: Method = Method::Sparse(PatternFamily::VerticalSlash);

    fn rec(ctx: usize, method: Method, latency: Option<f64>) -> BenchRecord {
        BenchRecord {
            ctx,
            method,
            pattern: String::new(),
            latency_s: latency,
            flops: 0,
            mem_bytes: None,
            frob_err: None,
            seed: 0,
        }
    }

    fn sweep(dense: &[f64], sparse: &[f64]) -> Vec<BenchRecord> {
        let ctx = [1024, 2048, 4096, 8192, 16384];
        let mut v = Vec::new();
        for (i, &c) in ctx.iter().enumerate().take(dense.len()) {
            v.push(rec(c, Method::Dense, Some(dense[i])));
            v.push(rec(c, VS, Some(sparse[i])));
        }
        v
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<_> = (0..5).map(|x| (x as f64, 3.0 * x as f64 + 1.0)).collect();
        assert!((ls_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(ls_slope(&pts[..1]), None);
    }

    #[test]
    fn top_half_ranges() {
        assert_eq!(top_half(7), 3..7);
        assert_eq!(top_half(4), 2..4);
        assert_eq!(top_half(3), 1..3);
        assert_eq!(top_half(1), 0..1);
    }

    #[test]
    fn always_faster_crosses_at_first_ctx() {
        let r = find_threshold(&sweep(&[2.0; 5], &[1.0; 5])).unwrap();
        assert_eq!(r[0].crossover_ctx, Some(1024));
    }

    #[test]
    fn always_slower_has_no_crossover() {
        let r = find_threshold(&sweep(&[1.0; 5], &[2.0; 5])).unwrap();
        assert_eq!(r[0].crossover_ctx, None);
    }

    #[test]
    fn constructed_crossing_at_8192() {
        let dense = [0.1, 0.4, 1.6, 6.4, 25.6];
        let sparse = [0.5, 1.0, 2.0, 4.0, 8.0];
        let r = find_threshold(&sweep(&dense, &sparse)).unwrap();
        assert_eq!(r[0].crossover_ctx, Some(8192));
        assert!(r[0].flattens());
    }

    #[test]
    fn unavailable_dense_rows_are_not_shared() {
        let mut v = sweep(&[1.0, 1.0, 1.0], &[2.0, 2.0, 0.5]);
        v[4].latency_s = None;
        let r = find_threshold(&v).unwrap();
        assert_eq!(r[0].shared_ctx, vec![1024, 2048]);
        assert_eq!(r[0].crossover_ctx, None);
    }

    #[test]
    fn needs_a_pair() {
        assert!(find_threshold(&[rec(64, Method::Dense, Some(1.0))]).is_err());
        let disjoint = [rec(64, Method::Dense, Some(1.0)), rec(128, VS, Some(1.0))];
        assert!(find_threshold(&disjoint).is_err());
    }
}
