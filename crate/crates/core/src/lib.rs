//! Dynamic sparse attention for long-context prefill.
//!
//! Three sparsity families (triangular band, vertical-slash, block-sparse)
//! are realized per head from the actual inputs, and a FLOPs-targeted search
//! picks the family and size that best approximate dense attention. A small
//! runtime runs multi-head prefill and cached decode on top of the kernels.
//!
//! Kernels are generic over [`Real`]: `f64` serves as the reference path,
//! `f32` as the performance path.

pub mod attn;
mod error;
pub mod flops;
mod matrix;
pub mod runtime;
pub mod search;
pub mod sparse;
pub mod synth;

pub use attn::{
    dense_attention, frob_norm_diff, output_norm_diff, softmax_row, AttnMatrices, AttnOutput,
    AttnWeights, ErrorMetric,
};
pub use error::{Error, Result};
pub use flops::{dense_flops, estimate_flops, FlopsEstimate, WorkCounter};
pub use matrix::{Matrix, Real};
pub use runtime::{
    decode_step, prefill, AutoSelect, DecodeInput, HeadChoice, HeadPlan, KvCache, ModelConfig,
    PrefillMode, PrefillOptions,
};
pub use search::{
    refine_search_space, select_pattern, select_pattern_windowed, SearchResult, SearchSpace,
};
pub use sparse::{PatternFamily, ScoreMode, SparseIndex, SparsityPattern};
