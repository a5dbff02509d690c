//! Benchmark harness for sparse attention prefill.
//!
//! Sweeps context lengths across dense and sparse methods, measures median
//! prefill latency and peak heap growth, estimates FLOPs and memory, finds
//! where sparse attention overtakes dense, and writes CSV or Markdown.
//!
//! Linking this crate installs [`alloc::PeakAlloc`] as the global allocator.

pub mod alloc;
pub mod config;
pub mod memory;
pub mod report;
pub mod sweep;
pub mod tensor_io;
pub mod threshold;

pub use config::{BenchConfig, Format, Method};
pub use memory::{estimate_attention_memory, MemoryEstimate};
pub use report::{emit_report, parse_csv, render_csv};
pub use sweep::{run_sweep, run_sweep_with, BenchRecord, SweepRow};
pub use tensor_io::{read_tensor, write_tensor, Tensor, TensorError};
pub use threshold::{find_threshold, ThresholdReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sparse_accel::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("threshold: {0}")]
    Threshold(String),
    #[error("report: {0}")]
    Report(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Stable short name used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Core(_) => "attention",
            HarnessError::Tensor(e) => e.kind(),
            HarnessError::Threshold(_) => "threshold",
            HarnessError::Report(_) => "report",
            HarnessError::Io { .. } => "io",
        }
    }
}

/// Sizes rayon's global pool. Only the first call in a process takes effect.
pub fn init_threads(threads: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .is_ok()
}
