//! Context-length sweeps over attention methods.

use std::time::{Duration, Instant};

use sparse_accel::sparse::sparse_attention;
use sparse_accel::synth::random_heads;
use sparse_accel::{
    decode_step, dense_attention, dense_flops, estimate_flops, frob_norm_diff, prefill,
    AttnMatrices, DecodeInput, HeadChoice, HeadPlan, ModelConfig, PrefillMode, PrefillOptions,
};

use crate::alloc::measure_peak;
use crate::config::{BenchConfig, Method};
use crate::memory::{dense_weight_bytes, estimate_attention_memory};
use crate::HarnessError;

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub ctx: usize,
    pub method: Method,
    pub pattern: String,
    /// Median prefill seconds; `None` marks an OOM-analog row.
    pub latency_s: Option<f64>,
    pub flops: u64,
    /// Peak heap growth during prefill.
    pub mem_bytes: Option<u64>,
    pub frob_err: Option<f64>,
    pub seed: u64,
}

impl BenchRecord {
    pub fn available(&self) -> bool {
        self.latency_s.is_some()
    }
}

/// A record plus the figures that only the Markdown report shows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub record: BenchRecord,
    pub analytic_mem_bytes: u64,
    /// Median single-token decode step after the prefill.
    pub decode_s: Option<f64>,
}

/// Seed of the inputs at one ctx, shared by every method.
pub fn ctx_seed(seed: u64, ctx: usize) -> u64 {
    seed ^ (ctx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn options(method: Method, ctx: usize, cfg: &BenchConfig) -> PrefillOptions {
    let mode = match method {
        Method::Dense => PrefillMode::Dense,
        Method::Sparse(family) => PrefillMode::Fixed(cfg.pattern(family, ctx)),
        Method::Auto => PrefillMode::Auto(cfg.auto()),
    };
    PrefillOptions {
        mode,
        score_mode: cfg.score_mode(),
    }
}

fn pattern_label(plans: &[HeadPlan]) -> String {
    let labels: Vec<String> = plans
        .iter()
        .map(|p| match &p.choice {
            HeadChoice::Dense => "dense".to_string(),
            HeadChoice::Sparse(s) => s.to_string(),
        })
        .collect();
    if labels.iter().all(|l| *l == labels[0]) {
        labels[0].clone()
    } else {
        labels.join("|")
    }
}

fn plan_flops(plans: &[HeadPlan], ctx: usize, cfg: &BenchConfig) -> Result<u64, HarnessError> {
    let mut total = 0;
    for p in plans {
        total += match &p.choice {
            HeadChoice::Dense => dense_flops(ctx, cfg.d_head).total(),
            HeadChoice::Sparse(s) => estimate_flops(s, ctx, cfg.d_head, cfg.q_est)?.total(),
        };
    }
    Ok(total)
}

/// Root-sum-square over heads of the f64 weight error against dense.
fn weight_error(heads: &[AttnMatrices<f32>], plans: &[HeadPlan]) -> Result<f64, HarnessError> {
    let mut sq = 0.0;
    for (m, plan) in heads.iter().zip(plans) {
        let Some(idx) = &plan.index else { continue };
        let m64 = m.cast::<f64>();
        let (dense, _) = dense_attention(&m64);
        let (sparse, _) = sparse_attention(&m64, idx)?;
        let e = frob_norm_diff(&sparse, &dense)?;
        sq += e * e;
    }
    Ok(sq.sqrt())
}

/// Decode steps timed after each warm-up prefill.
pub const DECODE_STEPS: usize = 3;

struct Timed {
    plans: Vec<HeadPlan>,
    latency: f64,
    peak: u64,
    decode: f64,
}

fn time_prefill(
    batch: &[Vec<AttnMatrices<f32>>],
    model: &ModelConfig,
    opts: &PrefillOptions,
    repeats: usize,
) -> Result<Timed, HarnessError> {
    // warm-up; its plans are the ones reported and its cache feeds decode
    let mut warm = prefill(batch, model, opts)?;
    let heads = &batch[0];
    let ctx = heads[0].n();
    let mut steps = Vec::with_capacity(DECODE_STEPS);
    for t in 0..DECODE_STEPS {
        let row = ctx - 1 - t % ctx;
        let x: Vec<_> = heads
            .iter()
            .map(|m| DecodeInput {
                q: m.q().row(row).to_vec(),
                k: m.k().row(row).to_vec(),
                v: m.v().row(row).to_vec(),
            })
            .collect();
        steps.push(
            decode_step(&[x], &mut warm.caches, model)?
                .timing
                .as_secs_f64(),
        );
    }
    let plans = warm.plans.swap_remove(0);
    drop(warm);

    let mut times = Vec::with_capacity(repeats);
    let mut peak = 0;
    for _ in 0..repeats {
        let (r, bytes) = measure_peak(|| {
            let start = Instant::now();
            let out = prefill(batch, model, opts);
            (out.map(|_| ()), start.elapsed())
        });
        r.0?;
        times.push(r.1.max(Duration::from_nanos(1)).as_secs_f64());
        peak = peak.max(bytes as u64);
    }
    Ok(Timed {
        plans,
        latency: median(&mut times),
        peak,
        decode: median(&mut steps),
    })
}

/// Checks everything that can fail before any timing starts.
pub fn validate(cfg: &BenchConfig) -> Result<ModelConfig, HarnessError> {
    cfg.validate()?;
    let max = cfg.ctx[cfg.ctx.len() - 1] + DECODE_STEPS;
    let model = ModelConfig::new(cfg.heads, cfg.d_head, max)?;
    for &ctx in &cfg.ctx {
        for &method in &cfg.methods {
            if let Method::Sparse(family) = method {
                cfg.pattern(family, ctx).validate(ctx)?;
            }
        }
    }
    Ok(model)
}

pub fn run_sweep(cfg: &BenchConfig) -> Result<Vec<SweepRow>, HarnessError> {
    run_sweep_with(cfg, |_| {})
}

/// Runs the sweep, calling `progress` after each finished row.
pub fn run_sweep_with(
    cfg: &BenchConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, HarnessError> {
    let model = validate(cfg)?;
    let mut rows = Vec::with_capacity(cfg.ctx.len() * cfg.methods.len());
    for &ctx in &cfg.ctx {
        let heads = random_heads::<f32>(cfg.heads, ctx, cfg.d_head, ctx_seed(cfg.seed, ctx));
        let batch = [heads];
        let dense_fits = dense_weight_bytes(ctx) <= cfg.dense_cap_bytes();
        for &method in &cfg.methods {
            let analytic = estimate_attention_memory(method, ctx, cfg).total();
            let row = if method.is_dense() && !dense_fits {
                SweepRow {
                    record: BenchRecord {
                        ctx,
                        method,
                        pattern: "dense".into(),
                        latency_s: None,
                        flops: dense_flops(ctx, cfg.d_head).total() * cfg.heads as u64,
                        mem_bytes: None,
                        frob_err: None,
                        seed: cfg.seed,
                    },
                    analytic_mem_bytes: analytic,
                    decode_s: None,
                }
            } else {
                let opts = options(method, ctx, cfg);
                let Timed {
                    plans,
                    latency,
                    peak,
                    decode,
                } = time_prefill(&batch, &model, &opts, cfg.repeats)?;
                let frob_err = if method.is_dense() {
                    Some(0.0)
                } else if ctx <= cfg.frob_max_ctx && dense_fits {
                    Some(weight_error(&batch[0], &plans)?)
                } else {
                    None
                };
                SweepRow {
                    record: BenchRecord {
                        ctx,
                        method,
                        pattern: pattern_label(&plans),
                        latency_s: Some(latency),
                        flops: plan_flops(&plans, ctx, cfg)?,
                        mem_bytes: Some(peak),
                        frob_err,
                        seed: cfg.seed,
                    },
                    analytic_mem_bytes: analytic,
                    decode_s: Some(decode),
                }
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn ctx_seeds_differ() {
        assert_ne!(ctx_seed(1, 256), ctx_seed(1, 512));
        assert_eq!(ctx_seed(0, 0), 0);
    }
}
