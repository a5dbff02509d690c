use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sparse_accel::synth::random_heads;
use sparse_accel::{prefill, select_pattern_windowed, ModelConfig, PrefillMode, PrefillOptions};
use sparse_accel_cli::config::{parse_list, parse_methods};
use sparse_accel_cli::report::emit_report;
use sparse_accel_cli::tensor_io::{heads_to_tensor, tensor_to_heads};
use sparse_accel_cli::{
    find_threshold, init_threads, read_tensor, run_sweep_with, write_tensor, BenchConfig,
    HarnessError, Tensor,
};

#[derive(Parser)]
#[command(
    name = "sparse-accel",
    version,
    about = "Sparse attention prefill benchmarks"
)]
struct Cli {
    /// File of `key = value` lines applied before flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for attention kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep context lengths and report latency, FLOPs, memory and error.
    Bench(BenchArgs),
    /// Run pattern selection on a tensor file and print one pattern per head.
    Select(SearchArgs),
    /// Run one prefill on a tensor file and write the output tensor.
    Attn(AttnArgs),
    /// Write seeded synthetic heads as a tensor file.
    Gen(GenArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated context lengths, ascending.
    #[arg(long)]
    ctx: Option<String>,
    /// Comma-separated methods: dense, triangular, vertical-slash, block-sparse, auto, or `all`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_head: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long)]
    format: Option<String>,
    /// Dense rows whose weights exceed this many MiB are reported as unavailable.
    #[arg(long)]
    dense_cap_mb: Option<u64>,
    #[command(flatten)]
    search: SearchFlags,
    /// Suppress per-row progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SearchFlags {
    /// Nominal density of sparse patterns.
    #[arg(long)]
    density: Option<f64>,
    /// Trailing query rows used to score vertical-slash indices.
    #[arg(long)]
    q_est: Option<usize>,
    #[arg(long)]
    block_side: Option<usize>,
    /// Trailing window auto selection searches on.
    #[arg(long)]
    cal_window: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    /// SATN tensor of shape [heads, 3, L, d] or [3, L, d].
    input: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct AttnArgs {
    input: PathBuf,
    /// dense, auto, or a pattern such as `vertical-slash:kv=64:ks=64`.
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Output tensor of shape [L, heads * d].
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    ctx: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_head: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn base_config(cli: &Cli) -> Result<BenchConfig, HarnessError> {
    let mut cfg = BenchConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn apply_search(cfg: &mut BenchConfig, s: &SearchFlags) {
    if let Some(x) = s.density {
        cfg.density = x;
    }
    if let Some(x) = s.q_est {
        cfg.q_est = x;
    }
    if let Some(x) = s.block_side {
        cfg.block_side = x;
    }
    if let Some(x) = s.cal_window {
        cfg.cal_window = x;
    }
}

fn bench(mut cfg: BenchConfig, a: &BenchArgs) -> Result<(), HarnessError> {
    if let Some(s) = &a.ctx {
        cfg.ctx = parse_list("ctx", s)?;
    }
    if let Some(s) = &a.methods {
        cfg.methods = parse_methods(s)?;
    }
    macro_rules! take {
        ($($f:ident),*) => { $(if let Some(x) = a.$f.clone() { cfg.$f = x; })* };
    }
    take!(heads, d_head, repeats, seed, dense_cap_mb);
    if let Some(p) = &a.out {
        cfg.out = Some(p.clone());
    }
    if let Some(f) = &a.format {
        cfg.format = f.parse()?;
    }
    apply_search(&mut cfg, &a.search);
    cfg.validate()?;
    init_threads(cfg.threads);

    let quiet = a.quiet;
    let rows = run_sweep_with(&cfg, |row| {
        if !quiet {
            let r = &row.record;
            let lat = r
                .latency_s
                .map_or_else(|| "-".into(), |l| format!("{l:.4}s"));
            eprintln!("ctx={} method={} latency={lat}", r.ctx, r.method);
        }
    })?;
    let records: Vec<_> = rows.iter().map(|r| r.record.clone()).collect();
    let thresholds = find_threshold(&records).unwrap_or_default();
    for t in thresholds.iter().filter(|_| !quiet) {
        let cross = t
            .crossover_ctx
            .map_or_else(|| "none in range".into(), |c| c.to_string());
        eprintln!(
            "threshold {}: crossover={cross} flatter={}",
            t.sparse,
            t.flattens()
        );
    }
    emit_report(&rows, &thresholds, cfg.format, cfg.out.as_deref())
}

fn load_heads(path: &Path) -> Result<Vec<sparse_accel::AttnMatrices<f32>>, HarnessError> {
    Ok(tensor_to_heads(&read_tensor(path)?)?)
}

fn select(mut cfg: BenchConfig, a: &SearchArgs) -> Result<(), HarnessError> {
    apply_search(&mut cfg, &a.search);
    cfg.validate()?;
    init_threads(cfg.threads);
    let heads = load_heads(&a.input)?;
    let l = heads[0].n();
    let auto = cfg.auto();
    for (h, m) in heads.iter().enumerate() {
        let cal = auto.cal_window.min(l);
        let space = auto.space(cal, m.d_head(), cfg.score_mode());
        let r = select_pattern_windowed(m, &space, cal)?;
        println!(
            "{}",
            json!({
                "head": h,
                "pattern": r.chosen.to_string(),
                "family": r.chosen.family().to_string(),
                "error": r.error,
                "flops": r.realized_flops,
                "converged": r.converged,
            })
        );
    }
    Ok(())
}

fn attn(mut cfg: BenchConfig, a: &AttnArgs) -> Result<(), HarnessError> {
    apply_search(&mut cfg, &a.search);
    cfg.validate()?;
    init_threads(cfg.threads);
    let heads = load_heads(&a.input)?;
    let (l, d) = (heads[0].n(), heads[0].d_head());
    let mode = match a.mode.as_str() {
        "dense" => PrefillMode::Dense,
        "auto" => PrefillMode::Auto(cfg.auto()),
        p => PrefillMode::Fixed(p.parse()?),
    };
    let model = ModelConfig::new(heads.len(), d, l)?;
    let opts = PrefillOptions {
        mode,
        score_mode: cfg.score_mode(),
    };
    let out = prefill(&[heads], &model, &opts)?;
    let y = out.outputs.into_iter().next().expect("one sequence");
    let (rows, cols) = y.shape();
    write_tensor(&a.out, &Tensor::new(vec![rows, cols], y.into_vec()))?;
    eprintln!("prefill {:.4}s", out.timing.total.as_secs_f64());
    Ok(())
}

fn gen(a: &GenArgs) -> Result<(), HarnessError> {
    if a.ctx == 0 || a.heads == 0 || a.d_head == 0 {
        return Err(HarnessError::Config(
            "ctx, heads and d-head must be positive".into(),
        ));
    }
    let heads = random_heads::<f32>(a.heads, a.ctx, a.d_head, a.seed);
    write_tensor(&a.out, &heads_to_tensor(&heads))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = base_config(cli)?;
    match &cli.cmd {
        Command::Bench(a) => bench(cfg, a),
        Command::Select(a) => select(cfg, a),
        Command::Attn(a) => attn(cfg, a),
        Command::Gen(a) => gen(a),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
