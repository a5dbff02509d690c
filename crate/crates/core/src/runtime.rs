//! Multi-head prefill and single-token decode over pre-projected Q/K/V.
//!
//! Sequences in a batch are independent and processed in order. Within a
//! sequence heads run one after another; each kernel parallelizes over rows,
//! so at most one head's transient buffers are live at a time.

use std::time::{Duration, Instant};

use crate::attn::{dense_attention, softmax_in_place, AttnMatrices, ErrorMetric};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix, Real};
use crate::search::{
    select_pattern_windowed, SearchResult, SearchSpace, DEFAULT_BLOCK_SIDE, DEFAULT_DENSE_CAP,
    DEFAULT_DENSITY, DEFAULT_EPSILON, DEFAULT_MAX_REFINE_ITERS,
};
use crate::sparse::{
    build_index, sparse_attention_output, ScoreMode, SparseIndex, SparsityPattern,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_heads: usize,
    pub d_head: usize,
    pub max_context: usize,
}

impl ModelConfig {
    pub fn new(n_heads: usize, d_head: usize, max_context: usize) -> Result<Self> {
        if n_heads == 0 || d_head == 0 || max_context == 0 {
            return Err(Error::InvalidConfig(
                "n_heads, d_head and max_context must be positive".into(),
            ));
        }
        Ok(Self {
            n_heads,
            d_head,
            max_context,
        })
    }

    /// Derives `d_head = d_model / n_heads`, which must divide exactly.
    pub fn from_model_dim(d_model: usize, n_heads: usize, max_context: usize) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {d_model} is not a multiple of n_heads {n_heads}"
            )));
        }
        Self::new(n_heads, d_model / n_heads, max_context)
    }

    pub fn d_model(&self) -> usize {
        self.n_heads * self.d_head
    }
}

/// Append-only key/value cache of one sequence, all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    d_head: usize,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            keys: vec![Vec::new(); cfg.n_heads],
            values: vec![Vec::new(); cfg.n_heads],
            d_head: cfg.d_head,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_heads(&self) -> usize {
        self.keys.len()
    }

    /// Cached key rows of head `h`, row-major `len x d_head`.
    pub fn keys(&self, h: usize) -> &[T] {
        &self.keys[h]
    }

    pub fn values(&self, h: usize) -> &[T] {
        &self.values[h]
    }
}

/// Parameters of per-head automatic pattern selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoSelect {
    /// Trailing window the search is run on.
    pub cal_window: usize,
    /// Nominal density of the initial candidates and of the budget.
    pub density: f64,
    pub block_side: usize,
    pub epsilon: f64,
    pub max_refine_iters: usize,
    pub metric: ErrorMetric,
}

impl Default for AutoSelect {
    fn default() -> Self {
        Self {
            cal_window: 256,
            density: DEFAULT_DENSITY,
            block_side: DEFAULT_BLOCK_SIDE,
            epsilon: DEFAULT_EPSILON,
            max_refine_iters: DEFAULT_MAX_REFINE_ITERS,
            metric: ErrorMetric::Weights,
        }
    }
}

impl AutoSelect {
    /// Search space at calibration length `cal`.
    pub fn space(&self, cal: usize, d_head: usize, score_mode: ScoreMode) -> SearchSpace {
        SearchSpace::with_density(cal, d_head, self.density, self.block_side)
            .epsilon(self.epsilon)
            .max_refine_iters(self.max_refine_iters)
            .score_mode(score_mode)
            .dense_cap(DEFAULT_DENSE_CAP.max(cal))
            .metric(self.metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrefillMode {
    Dense,
    Auto(AutoSelect),
    Fixed(SparsityPattern),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefillOptions {
    pub mode: PrefillMode,
    /// Scoring used to realize vertical-slash indices at full length.
    pub score_mode: ScoreMode,
}

impl PrefillOptions {
    pub fn new(mode: PrefillMode) -> Self {
        Self {
            mode,
            score_mode: ScoreMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadChoice {
    Dense,
    Sparse(SparsityPattern),
}

/// What one head ran during a prefill.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPlan {
    pub head: usize,
    pub choice: HeadChoice,
    pub search: Option<SearchResult>,
    pub index: Option<SparseIndex>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrefillTiming {
    /// Wall clock of the whole prefill.
    pub total: Duration,
    /// Pattern search and index construction.
    pub selection: Duration,
    /// Attention kernels, one entry per (sequence, head).
    pub kernels: Vec<Duration>,
}

impl PrefillTiming {
    pub fn kernel_total(&self) -> Duration {
        self.kernels.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Prefill<T> {
    /// One `L x (n_heads * d_head)` matrix per sequence; head `h` occupies
    /// columns `h*d_head .. (h+1)*d_head`.
    pub outputs: Vec<Matrix<T>>,
    pub caches: Vec<KvCache<T>>,
    /// Per sequence, one plan per head.
    pub plans: Vec<Vec<HeadPlan>>,
    pub timing: PrefillTiming,
}

fn check_sequence<T: Real>(heads: &[AttnMatrices<T>], cfg: &ModelConfig) -> Result<usize> {
    if heads.len() != cfg.n_heads {
        return Err(Error::InvalidConfig(format!(
            "expected {} heads, found {}",
            cfg.n_heads,
            heads.len()
        )));
    }
    let l = heads[0].n();
    for h in heads {
        if h.n() != l || h.d_head() != cfg.d_head {
            return Err(Error::DimensionMismatch {
                what: "head inputs",
                expected: (l, cfg.d_head),
                found: (h.n(), h.d_head()),
            });
        }
        if !h.is_causal() {
            return Err(Error::NotCausal);
        }
    }
    if l > cfg.max_context {
        return Err(Error::ContextOverflow {
            requested: l,
            max: cfg.max_context,
        });
    }
    Ok(l)
}

/// Processes every prompt token of every sequence at once.
pub fn prefill<T: Real>(
    batch: &[Vec<AttnMatrices<T>>],
    cfg: &ModelConfig,
    opts: &PrefillOptions,
) -> Result<Prefill<T>> {
    let lens = batch
        .iter()
        .map(|seq| check_sequence(seq, cfg))
        .collect::<Result<Vec<_>>>()?;
    if let PrefillMode::Fixed(p) = &opts.mode {
        for &l in &lens {
            p.validate(l)?;
        }
    }

    let start = Instant::now();
    let mut timing = PrefillTiming::default();
    let mut outputs = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    let mut plans = Vec::with_capacity(batch.len());

    for (seq, &l) in batch.iter().zip(&lens) {
        let d = cfg.d_head;
        let mut out = Matrix::zeros(l, cfg.d_model());
        let mut cache = KvCache::new(cfg);
        let mut seq_plans = Vec::with_capacity(cfg.n_heads);
        let score_mode = match opts.score_mode {
            ScoreMode::Estimated { q_est } => ScoreMode::Estimated {
                q_est: q_est.clamp(1, l),
            },
            ScoreMode::Exact => ScoreMode::Exact,
        };

        for (h, m) in seq.iter().enumerate() {
            let sel_start = Instant::now();
            let (choice, search, index) = match &opts.mode {
                PrefillMode::Dense => (HeadChoice::Dense, None, None),
                PrefillMode::Fixed(p) => {
                    let idx = build_index(m, p, score_mode)?;
                    (HeadChoice::Sparse(*p), None, Some(idx))
                }
                PrefillMode::Auto(auto) => {
                    let cal = auto.cal_window.min(l);
                    let space = auto.space(cal, d, score_mode);
                    let r = select_pattern_windowed(m, &space, cal)?;
                    let idx = build_index(m, &r.chosen, score_mode)?;
                    (HeadChoice::Sparse(r.chosen), Some(r), Some(idx))
                }
            };
            timing.selection += sel_start.elapsed();

            let k_start = Instant::now();
            let y = match &index {
                None => dense_attention(m).1,
                Some(idx) => sparse_attention_output(m, idx, None)?,
            };
            timing.kernels.push(k_start.elapsed());

            for i in 0..l {
                out.row_mut(i)[h * d..(h + 1) * d].copy_from_slice(y.row(i));
            }
            cache.keys[h].extend_from_slice(m.k().as_slice());
            cache.values[h].extend_from_slice(m.v().as_slice());
            seq_plans.push(HeadPlan {
                head: h,
                choice,
                search,
                index,
            });
        }
        cache.len = l;
        outputs.push(out);
        caches.push(cache);
        plans.push(seq_plans);
    }
    timing.total = start.elapsed();
    Ok(Prefill {
        outputs,
        caches,
        plans,
        timing,
    })
}

/// New query/key/value rows of one head for one decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeInput<T> {
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Decode<T> {
    /// One `n_heads * d_head` row per sequence.
    pub outputs: Vec<Vec<T>>,
    pub timing: Duration,
}

/// Appends one token per sequence to its cache and attends over the whole
/// cache with a dense row.
pub fn decode_step<T: Real>(
    batch: &[Vec<DecodeInput<T>>],
    caches: &mut [KvCache<T>],
    cfg: &ModelConfig,
) -> Result<Decode<T>> {
    if batch.len() != caches.len() {
        return Err(Error::InvalidConfig(format!(
            "{} decode inputs for {} caches",
            batch.len(),
            caches.len()
        )));
    }
    let d = cfg.d_head;
    for (seq, cache) in batch.iter().zip(caches.iter()) {
        if seq.len() != cfg.n_heads || cache.n_heads() != cfg.n_heads {
            return Err(Error::InvalidConfig(format!(
                "expected {} heads",
                cfg.n_heads
            )));
        }
        if seq
            .iter()
            .any(|x| x.q.len() != d || x.k.len() != d || x.v.len() != d)
        {
            return Err(Error::DimensionMismatch {
                what: "decode rows",
                expected: (1, d),
                found: (1, seq[0].q.len()),
            });
        }
        if cache.is_empty() {
            return Err(Error::EmptyInput("decode needs a non-empty cache"));
        }
        if cache.len() + 1 > cfg.max_context {
            return Err(Error::ContextOverflow {
                requested: cache.len() + 1,
                max: cfg.max_context,
            });
        }
    }

    let start = Instant::now();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut outputs = Vec::with_capacity(batch.len());
    for (seq, cache) in batch.iter().zip(caches.iter_mut()) {
        let mut out = vec![T::zero(); cfg.d_model()];
        let len = cache.len + 1;
        let mut w = vec![T::zero(); len];
        for (h, x) in seq.iter().enumerate() {
            cache.keys[h].extend_from_slice(&x.k);
            cache.values[h].extend_from_slice(&x.v);
            let keys = &cache.keys[h];
            let values = &cache.values[h];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = dot(&x.q, &keys[j * d..(j + 1) * d]) * scale;
            }
            softmax_in_place(&mut w);
            let o = &mut out[h * d..(h + 1) * d];
            for (j, &wj) in w.iter().enumerate() {
                axpy(o, wj, &values[j * d..(j + 1) * d]);
            }
        }
        cache.len = len;
        outputs.push(out);
    }
    Ok(Decode {
        outputs,
        timing: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_heads;

    fn cfg(h: usize, d: usize) -> ModelConfig {
        ModelConfig::new(h, d, 1024).unwrap()
    }

    #[test]
    fn model_dim_must_divide() {
        assert!(ModelConfig::from_model_dim(64, 3, 10).is_err());
        assert_eq!(ModelConfig::from_model_dim(64, 4, 10).unwrap().d_head, 16);
    }

    #[test]
    fn single_token_prefill_returns_values() {
        let c = cfg(2, 3);
        let heads = random_heads::<f64>(2, 1, 3, 4);
        for mode in [
            PrefillMode::Dense,
            PrefillMode::Auto(AutoSelect::default()),
            PrefillMode::Fixed(SparsityPattern::VerticalSlash { k_v: 1, k_s: 1 }),
        ] {
            let p = prefill(&[heads.clone()], &c, &PrefillOptions::new(mode)).unwrap();
            assert_eq!(&p.outputs[0].row(0)[..3], heads[0].v().row(0));
            assert_eq!(&p.outputs[0].row(0)[3..], heads[1].v().row(0));
            assert_eq!(p.caches[0].len(), 1);
            assert_eq!(p.plans[0].len(), 2);
        }
    }

    #[test]
    fn overlong_prompt_rejected() {
        let c = ModelConfig::new(1, 2, 4).unwrap();
        let heads = random_heads::<f64>(1, 5, 2, 0);
        assert_eq!(
            prefill(&[heads], &c, &PrefillOptions::new(PrefillMode::Dense)).unwrap_err(),
            Error::ContextOverflow {
                requested: 5,
                max: 4
            }
        );
    }

    #[test]
    fn wrong_head_count_rejected() {
        let heads = random_heads::<f64>(1, 5, 2, 0);
        assert!(prefill(
            &[heads],
            &cfg(2, 2),
            &PrefillOptions::new(PrefillMode::Dense)
        )
        .is_err());
    }

    #[test]
    fn decode_with_zero_logits_averages() {
        let c = cfg(1, 2);
        let m = AttnMatrices::causal(
            Matrix::zeros(1, 2),
            Matrix::zeros(1, 2),
            Matrix::from_rows(&[[1.0f64, 3.0]]).unwrap(),
        )
        .unwrap();
        let mut p = prefill(&[vec![m]], &c, &PrefillOptions::new(PrefillMode::Dense)).unwrap();
        let x = DecodeInput {
            q: vec![0.0, 0.0],
            k: vec![0.0, 0.0],
            v: vec![5.0, -1.0],
        };
        let out = decode_step(&[vec![x]], &mut p.caches, &c).unwrap();
        assert_eq!(out.outputs[0], vec![3.0, 1.0]);
        assert_eq!(p.caches[0].len(), 2);
    }

    #[test]
    fn decode_overflow_rejected() {
        let c = ModelConfig::new(1, 2, 3).unwrap();
        let heads = random_heads::<f64>(1, 3, 2, 0);
        let mut p = prefill(&[heads], &c, &PrefillOptions::new(PrefillMode::Dense)).unwrap();
        let x = DecodeInput {
            q: vec![0.0; 2],
            k: vec![0.0; 2],
            v: vec![0.0; 2],
        };
        assert!(matches!(
            decode_step(&[vec![x]], &mut p.caches, &c),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn eight_decode_steps_grow_cache_by_eight() {
        let c = cfg(2, 4);
        let heads = random_heads::<f64>(2, 5, 4, 1);
        let mut p = prefill(&[heads], &c, &PrefillOptions::new(PrefillMode::Dense)).unwrap();
        let extra = random_heads::<f64>(2, 8, 4, 2);
        for t in 0..8 {
            let step: Vec<_> = extra
                .iter()
                .map(|m| DecodeInput {
                    q: m.q().row(t).to_vec(),
                    k: m.k().row(t).to_vec(),
                    v: m.v().row(t).to_vec(),
                })
                .collect();
            decode_step(&[step], &mut p.caches, &c).unwrap();
        }
        assert_eq!(p.caches[0].len(), 13);
        assert_eq!(p.caches[0].keys(1).len(), 13 * 4);
    }
}
