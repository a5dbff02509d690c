//! Kernel-aware pattern search: refine each candidate toward a FLOPs budget,
//! then keep the candidate whose sparse attention is closest to dense.
//!
//! The budget covers the attention kernel itself (logit and output MACs).
//! Index-construction cost is part of [`FlopsEstimate`] but not budgeted, so
//! that a candidate's budget fit does not depend on the scoring window.

use rayon::prelude::*;

use crate::attn::{dense_attention, frob_norm_diff, output_norm_diff, AttnMatrices, ErrorMetric};
use crate::error::{Error, Result};
use crate::flops::{dense_flops, estimate_flops, FlopsEstimate};
use crate::matrix::Real;
use crate::sparse::{build_index, sparse_attention, PatternFamily, ScoreMode, SparsityPattern};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MAX_REFINE_ITERS: usize = 8;
pub const DEFAULT_DENSE_CAP: usize = 4096;
pub const DEFAULT_DENSITY: f64 = 0.1;
pub const DEFAULT_BLOCK_SIDE: usize = 64;

/// Candidate patterns plus the budget they are refined toward.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub candidates: Vec<SparsityPattern>,
    /// Kernel MAC budget per head.
    pub target_flops: u64,
    /// Relative tolerance on the budget, in `(0, 1)`.
    pub epsilon: f64,
    pub max_refine_iters: usize,
    /// Scoring used when realizing vertical-slash candidates; `q_est` is
    /// clamped to the problem length.
    pub score_mode: ScoreMode,
    /// Largest length at which dense weights may be materialized.
    pub dense_cap: usize,
    pub metric: ErrorMetric,
}

impl SearchSpace {
    pub fn new(candidates: Vec<SparsityPattern>, target_flops: u64) -> Self {
        Self {
            candidates,
            target_flops,
            epsilon: DEFAULT_EPSILON,
            max_refine_iters: DEFAULT_MAX_REFINE_ITERS,
            score_mode: ScoreMode::default(),
            dense_cap: DEFAULT_DENSE_CAP,
            metric: ErrorMetric::Weights,
        }
    }

    /// One candidate per family at `density` of the causal triangle, with the
    /// budget set to the same fraction of dense kernel MACs.
    pub fn with_density(n: usize, d_h: usize, density: f64, block_side: usize) -> Self {
        let candidates = PatternFamily::ALL
            .into_iter()
            .map(|f| SparsityPattern::at_density(f, n, density, block_side))
            .collect();
        let target = (density * dense_flops(n, d_h).total() as f64)
            .round()
            .max(1.0) as u64;
        Self::new(candidates, target)
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn max_refine_iters(mut self, iters: usize) -> Self {
        self.max_refine_iters = iters;
        self
    }

    pub fn score_mode(mut self, mode: ScoreMode) -> Self {
        self.score_mode = mode;
        self
    }

    pub fn dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn metric(mut self, metric: ErrorMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidSearchSpace("candidate list is empty".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidSearchSpace(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.max_refine_iters == 0 {
            return Err(Error::InvalidSearchSpace(
                "max_refine_iters must be >= 1".into(),
            ));
        }
        if self.target_flops == 0 {
            return Err(Error::InvalidSearchSpace(
                "target_flops must be positive".into(),
            ));
        }
        Ok(())
    }

    fn within_budget(&self, flops: u64) -> bool {
        (flops as f64 - self.target_flops as f64).abs() <= self.epsilon * self.target_flops as f64
    }

    fn q_est(&self, n: usize) -> usize {
        self.score_mode.rows(n)
    }

    fn score_mode_for(&self, n: usize) -> ScoreMode {
        match self.score_mode {
            ScoreMode::Exact => ScoreMode::Exact,
            ScoreMode::Estimated { q_est } => ScoreMode::Estimated {
                q_est: q_est.clamp(1, n),
            },
        }
    }
}

/// A candidate after budget refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedCandidate {
    pub pattern: SparsityPattern,
    pub flops: FlopsEstimate,
    pub iterations: usize,
    pub converged: bool,
}

impl RefinedCandidate {
    /// The budgeted quantity: logit plus output MACs.
    pub fn kernel_flops(&self) -> u64 {
        self.flops.logits + self.flops.output
    }
}

fn kernel_flops(p: &SparsityPattern, n: usize, d_h: usize, q_est: usize) -> Result<FlopsEstimate> {
    estimate_flops(p, n, d_h, q_est)
}

fn scale_pattern(p: &SparsityPattern, ratio: f64, n: usize) -> SparsityPattern {
    let s = |x: usize| (x as f64 * ratio).round() as usize;
    match *p {
        SparsityPattern::Triangular { window, sinks } => SparsityPattern::Triangular {
            window: s(window),
            sinks: s(sinks),
        },
        SparsityPattern::VerticalSlash { k_v, k_s } => SparsityPattern::VerticalSlash {
            k_v: s(k_v),
            k_s: s(k_s),
        },
        SparsityPattern::BlockSparse { block, k_b } => {
            SparsityPattern::BlockSparse { block, k_b: s(k_b) }
        }
    }
    .clamp_to(n)
}

/// Moves one size parameter by one unit when rounding stalls the scaling.
fn nudge(p: &SparsityPattern, up: bool, n: usize) -> SparsityPattern {
    let step = |x: usize| if up { x + 1 } else { x.saturating_sub(1) };
    match *p {
        SparsityPattern::Triangular { window, sinks } => {
            if up || window >= sinks {
                SparsityPattern::Triangular {
                    window: step(window),
                    sinks,
                }
            } else {
                SparsityPattern::Triangular {
                    window,
                    sinks: step(sinks),
                }
            }
        }
        SparsityPattern::VerticalSlash { k_v, k_s } => {
            if (k_v >= k_s) != up {
                SparsityPattern::VerticalSlash {
                    k_v: step(k_v),
                    k_s,
                }
            } else {
                SparsityPattern::VerticalSlash {
                    k_v,
                    k_s: step(k_s),
                }
            }
        }
        SparsityPattern::BlockSparse { block, k_b } => SparsityPattern::BlockSparse {
            block,
            k_b: step(k_b),
        },
    }
    .clamp_to(n)
}

/// Refines every candidate toward `target_flops`.
///
/// Out-of-tolerance candidates have their size hyperparameters scaled by
/// `target / current`, rounded and clamped, at most `max_refine_iters` times.
/// The closest pattern seen is kept; it is flagged unconverged when it still
/// misses the tolerance.
pub fn refine_search_space(s: &SearchSpace, n: usize, d_h: usize) -> Result<Vec<RefinedCandidate>> {
    s.validate()?;
    let q_est = s.q_est(n);
    let target = s.target_flops as f64;
    s.candidates
        .iter()
        .map(|c| {
            let mut p = c.clamp_to(n);
            let mut t = kernel_flops(&p, n, d_h, q_est)?;
            let mut best = (p, t);
            let dist = |f: &FlopsEstimate| ((f.logits + f.output) as f64 - target).abs();
            let mut iterations = 0;
            while !s.within_budget(t.logits + t.output) && iterations < s.max_refine_iters {
                let cur = (t.logits + t.output) as f64;
                let mut next = scale_pattern(&p, target / cur, n);
                if next == p {
                    next = nudge(&p, cur < target, n);
                }
                p = next;
                t = kernel_flops(&p, n, d_h, q_est)?;
                iterations += 1;
                if dist(&t) < dist(&best.1) {
                    best = (p, t);
                }
            }
            let (pattern, flops) = best;
            Ok(RefinedCandidate {
                pattern,
                flops,
                iterations,
                converged: s.within_budget(flops.logits + flops.output),
            })
        })
        .collect()
}

/// Error of one refined candidate against dense attention.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub candidate: RefinedCandidate,
    pub error: f64,
}

/// Calibration details of a windowed search.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub window: usize,
    /// Winner at calibration scale, before re-scaling.
    pub pattern: SparsityPattern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub chosen: SparsityPattern,
    /// Kernel MACs of `chosen` at the length it applies to.
    pub realized_flops: u64,
    pub error: f64,
    pub iterations_used: usize,
    /// Budget fit of the winner on the problem that was searched (the
    /// calibration window for windowed searches).
    pub converged: bool,
    pub evaluations: Vec<CandidateEvaluation>,
    pub calibration: Option<Calibration>,
}

/// Picks the refined candidate with the smallest error against dense
/// attention; ties go to the earlier candidate.
pub fn select_pattern<T: Real>(m: &AttnMatrices<T>, s: &SearchSpace) -> Result<SearchResult> {
    s.validate()?;
    let n = m.n();
    if n > s.dense_cap {
        return Err(Error::DenseCapExceeded {
            n,
            cap: s.dense_cap,
        });
    }
    let refined = refine_search_space(s, n, m.d_head())?;
    let (dense_w, dense_y) = dense_attention(m);
    let mode = s.score_mode_for(n);

    let evaluations = refined
        .into_par_iter()
        .map(|candidate| {
            let idx = build_index(m, &candidate.pattern, mode)?;
            let (w, y) = sparse_attention(m, &idx)?;
            let err = match s.metric {
                ErrorMetric::Weights => frob_norm_diff(&w, &dense_w)?,
                ErrorMetric::Output => output_norm_diff(&y, &dense_y)?,
            };
            Ok(CandidateEvaluation {
                candidate,
                error: err.to_f64().unwrap_or(f64::INFINITY),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = evaluations.iter().enumerate().fold(0, |best, (i, e)| {
        if e.error < evaluations[best].error {
            i
        } else {
            best
        }
    });
    let win = &evaluations[best];
    Ok(SearchResult {
        chosen: win.candidate.pattern,
        realized_flops: win.candidate.kernel_flops(),
        error: win.error,
        iterations_used: win.candidate.iterations,
        converged: win.candidate.converged,
        calibration: None,
        evaluations,
    })
}

/// Runs [`select_pattern`] on the trailing `cal_window` queries and keys,
/// with `s` expressed at calibration scale, then re-scales the winner's
/// length-proportional parameters by `N / cal_window`.
pub fn select_pattern_windowed<T: Real>(
    m: &AttnMatrices<T>,
    s: &SearchSpace,
    cal_window: usize,
) -> Result<SearchResult> {
    let n = m.n();
    if cal_window == 0 || cal_window > n || cal_window > s.dense_cap {
        return Err(Error::InvalidCalibrationWindow {
            window: cal_window,
            n,
        });
    }
    if cal_window == n {
        return select_pattern(m, s);
    }
    let mut r = select_pattern(&m.trailing(cal_window), s)?;
    let at_window = r.chosen;
    r.chosen = at_window.rescale_to(n as f64 / cal_window as f64, n);
    let f = estimate_flops(&r.chosen, n, m.d_head(), 0)?;
    r.realized_flops = f.logits + f.output;
    r.calibration = Some(Calibration {
        window: cal_window,
        pattern: at_window,
    });
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_head;

    #[test]
    fn within_tolerance_is_fixed_point() {
        let p = SparsityPattern::VerticalSlash { k_v: 4, k_s: 4 };
        let s = SearchSpace::new(vec![p], 2 * 64 * 8 * 4);
        let r = refine_search_space(&s, 64, 4).unwrap();
        assert_eq!(r[0].pattern, p);
        assert_eq!(r[0].iterations, 0);
        assert!(r[0].converged);
    }

    #[test]
    fn halving_budget_halves_vertical_slash() {
        let p = SparsityPattern::VerticalSlash { k_v: 32, k_s: 32 };
        let full = estimate_flops(&p, 64, 4, 0).unwrap();
        let s =
            SearchSpace::new(vec![p], (full.logits + full.output) / 2).score_mode(ScoreMode::Exact);
        let r = refine_search_space(&s, 64, 4).unwrap();
        assert_eq!(
            r[0].pattern,
            SparsityPattern::VerticalSlash { k_v: 16, k_s: 16 }
        );
        assert_eq!(r[0].iterations, 1);
        assert!(r[0].converged);
    }

    #[test]
    fn unreachable_budget_clamps_at_minimum() {
        let p = SparsityPattern::Triangular {
            window: 10,
            sinks: 2,
        };
        let s = SearchSpace::new(vec![p], 1).max_refine_iters(5);
        let r = refine_search_space(&s, 64, 4).unwrap();
        assert_eq!(
            r[0].pattern,
            SparsityPattern::Triangular {
                window: 1,
                sinks: 0
            }
        );
        assert_eq!(r[0].iterations, 5);
        assert!(!r[0].converged);
    }

    #[test]
    fn invalid_spaces_rejected() {
        let p = SparsityPattern::Triangular {
            window: 1,
            sinks: 0,
        };
        assert!(SearchSpace::new(vec![], 10).validate().is_err());
        assert!(SearchSpace::new(vec![p], 10)
            .epsilon(0.0)
            .validate()
            .is_err());
        assert!(SearchSpace::new(vec![p], 10)
            .epsilon(1.0)
            .validate()
            .is_err());
        assert!(SearchSpace::new(vec![p], 10)
            .max_refine_iters(0)
            .validate()
            .is_err());
        let m = random_head::<f64>(8, 2, 0);
        assert!(select_pattern(&m, &SearchSpace::new(vec![], 10)).is_err());
    }

    #[test]
    fn dense_equivalent_wins_with_zero_error() {
        let m = random_head::<f64>(32, 4, 3);
        let full = SparsityPattern::Triangular {
            window: 32,
            sinks: 0,
        };
        let target = estimate_flops(&full, 32, 4, 0).unwrap();
        let s = SearchSpace::new(
            vec![SparsityPattern::VerticalSlash { k_v: 2, k_s: 2 }, full],
            target.logits + target.output,
        );
        let r = select_pattern(&m, &s).unwrap();
        assert_eq!(r.chosen, full);
        assert!(r.error < 1e-12);
    }

    #[test]
    fn single_candidate_always_returned() {
        let m = random_head::<f64>(16, 4, 9);
        let p = SparsityPattern::BlockSparse { block: 4, k_b: 1 };
        let f = estimate_flops(&p, 16, 4, 0).unwrap();
        let r = select_pattern(&m, &SearchSpace::new(vec![p], f.logits + f.output)).unwrap();
        assert_eq!(r.chosen, p);
        assert!(r.error > 0.0);
    }

    #[test]
    fn dense_cap_enforced() {
        let m = random_head::<f64>(20, 2, 1);
        let s = SearchSpace::with_density(20, 2, 0.1, 4).dense_cap(16);
        assert_eq!(
            select_pattern(&m, &s).unwrap_err(),
            Error::DenseCapExceeded { n: 20, cap: 16 }
        );
        assert!(select_pattern_windowed(&m, &s, 16).is_ok());
        assert!(select_pattern_windowed(&m, &s, 17).is_err());
        assert!(select_pattern_windowed(&m, &s, 0).is_err());
    }

    #[test]
    fn full_window_matches_plain_selection() {
        let m = random_head::<f64>(48, 4, 11);
        let s = SearchSpace::with_density(48, 4, 0.1, 8);
        assert_eq!(
            select_pattern_windowed(&m, &s, 48).unwrap(),
            select_pattern(&m, &s).unwrap()
        );
    }

    #[test]
    fn windowed_rescales_proportionally() {
        let m = random_head::<f64>(256, 4, 2);
        let s = SearchSpace::new(
            vec![SparsityPattern::VerticalSlash { k_v: 4, k_s: 2 }],
            2 * 64 * 6 * 4,
        );
        let r = select_pattern_windowed(&m, &s, 64).unwrap();
        assert_eq!(r.chosen, SparsityPattern::VerticalSlash { k_v: 16, k_s: 8 });
        assert_eq!(
            r.calibration.unwrap().pattern,
            SparsityPattern::VerticalSlash { k_v: 4, k_s: 2 }
        );
    }
}
