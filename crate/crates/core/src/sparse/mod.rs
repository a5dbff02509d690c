//! The three sparsity families, their index construction and the kernels
//! that evaluate attention restricted to a realized index.

mod build;
mod index;
mod kernel;
mod pattern;
mod scoring;

pub use build::{
    block_attention, block_mean, build_block_index, build_index, build_index_counted,
    build_triangular_index, build_vertical_slash_index,
};
pub use index::{realized_size, BlockSelection, SparseIndex};
pub use kernel::{
    block_sparse_attention, sparse_attention, sparse_attention_output, vertical_slash_attention,
};
pub use pattern::{PatternFamily, SparsityPattern};
pub use scoring::{
    score_columns, score_diagonals, score_vertical_slash, top_k, ScoreMode, VerticalSlashScores,
};

/// Triangular kernel; identical to [`sparse_attention`] over a band index.
pub use kernel::sparse_attention as triangular_attention;
