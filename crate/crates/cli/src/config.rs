//! Sweep configuration.
//!
//! Values come from three layers: built-in defaults, an optional file of
//! `key = value` lines, then command-line flags. Later layers win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sparse_accel::{AutoSelect, PatternFamily, ScoreMode, SparsityPattern};

use crate::HarnessError;

pub const DEFAULT_CTX: [usize; 7] = [256, 512, 1024, 2048, 4096, 8192, 16384];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Dense,
    Sparse(PatternFamily),
    Auto,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dense,
        Method::Sparse(PatternFamily::Triangular),
        Method::Sparse(PatternFamily::VerticalSlash),
        Method::Sparse(PatternFamily::BlockSparse),
        Method::Auto,
    ];

    pub fn is_dense(self) -> bool {
        self == Method::Dense
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dense => f.write_str("dense"),
            Method::Sparse(family) => write!(f, "{family}"),
            Method::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "dense" => Ok(Method::Dense),
            "auto" => Ok(Method::Auto),
            other => other
                .parse::<PatternFamily>()
                .map(Method::Sparse)
                .map_err(|_| HarnessError::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(HarnessError::Config(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub ctx: Vec<usize>,
    pub methods: Vec<Method>,
    pub heads: usize,
    pub d_head: usize,
    pub repeats: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Dense runs whose N x N weights would exceed this are skipped.
    pub dense_cap_mb: u64,
    pub threads: usize,
    /// Nominal density of fixed sparse patterns and of the auto budget.
    pub density: f64,
    pub q_est: usize,
    pub block_side: usize,
    pub cal_window: usize,
    /// Largest ctx at which the f64 error against dense is computed.
    pub frob_max_ctx: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ctx: DEFAULT_CTX.to_vec(),
            methods: vec![Method::Dense, Method::Sparse(PatternFamily::VerticalSlash)],
            heads: 8,
            d_head: 64,
            repeats: 3,
            seed: 0,
            out: None,
            format: Format::Csv,
            dense_cap_mb: 2048,
            threads: 1,
            density: 0.1,
            q_est: 64,
            block_side: 64,
            cal_window: 256,
            frob_max_ctx: 4096,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn parse_methods(value: &str) -> Result<Vec<Method>, HarnessError> {
    if value.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

impl BenchConfig {
    /// Applies one `key = value` setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = key.trim().replace('_', "-");
        match key.as_str() {
            "ctx" => self.ctx = parse_list(&key, value)?,
            "methods" => self.methods = parse_methods(value)?,
            "heads" => self.heads = parse(&key, value)?,
            "d-head" => self.d_head = parse(&key, value)?,
            "repeats" => self.repeats = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "format" => self.format = value.parse()?,
            "dense-cap-mb" => self.dense_cap_mb = parse(&key, value)?,
            "threads" => self.threads = parse(&key, value)?,
            "density" => self.density = parse(&key, value)?,
            "q-est" => self.q_est = parse(&key, value)?,
            "block-side" => self.block_side = parse(&key, value)?,
            "cal-window" => self.cal_window = parse(&key, value)?,
            "frob-max-ctx" => self.frob_max_ctx = parse(&key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file body. Blank lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str) -> Result<(), HarnessError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", no + 1))
            })?;
            self.set(k, v)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.apply_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.ctx.is_empty() || self.ctx.contains(&0) {
            return bad("ctx list must be non-empty and positive");
        }
        if self.ctx.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ctx list must be strictly ascending");
        }
        if self.methods.is_empty() {
            return bad("no methods given");
        }
        if self.heads == 0 || self.d_head == 0 {
            return bad("heads and d-head must be positive");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must be in (0, 1]");
        }
        if self.q_est == 0 || self.block_side == 0 || self.cal_window == 0 {
            return bad("q-est, block-side and cal-window must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be positive");
        }
        Ok(())
    }

    pub fn score_mode(&self) -> ScoreMode {
        ScoreMode::Estimated { q_est: self.q_est }
    }

    pub fn auto(&self) -> AutoSelect {
        AutoSelect {
            cal_window: self.cal_window,
            density: self.density,
            block_side: self.block_side,
            ..AutoSelect::default()
        }
    }

    /// Fixed pattern a sparse method runs at `ctx`.
    pub fn pattern(&self, family: PatternFamily, ctx: usize) -> SparsityPattern {
        SparsityPattern::at_density(family, ctx, self.density, self.block_side)
    }

    pub fn dense_cap_bytes(&self) -> u64 {
        self.dense_cap_mb.saturating_mul(1 << 20)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flag_precedence() {
        let mut c = BenchConfig::default();
        c.apply_str("# sweep\nctx = 64, 128\nrepeats=5\nd_head = 16 # small\n")
            .unwrap();
        assert_eq!(c.ctx, vec![64, 128]);
        assert_eq!(c.repeats, 5);
        assert_eq!(c.d_head, 16);
        c.set("repeats", "7").unwrap();
        assert_eq!(c.repeats, 7);
        assert_eq!(c.heads, 8);
    }

    #[test]
    fn bad_lines_are_reported() {
        let mut c = BenchConfig::default();
        let e = c.apply_str("ctx=1\nnonsense\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        assert!(c.apply_str("colour = red").is_err());
        assert!(c.apply_str("methods = dense,sparse").is_err());
    }

    #[test]
    fn validation() {
        let mut c = BenchConfig::default();
        assert!(c.validate().is_ok());
        c.ctx = vec![128, 64];
        assert!(c.validate().is_err());
        c.ctx = vec![64];
        c.repeats = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(parse_methods("all").unwrap().len(), 5);
    }
}
