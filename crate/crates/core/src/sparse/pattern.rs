use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flops;

/// The three pattern families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternFamily {
    Triangular,
    VerticalSlash,
    BlockSparse,
}

impl PatternFamily {
    pub const ALL: [PatternFamily; 3] = [
        PatternFamily::Triangular,
        PatternFamily::VerticalSlash,
        PatternFamily::BlockSparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Triangular => "triangular",
            PatternFamily::VerticalSlash => "vertical-slash",
            PatternFamily::BlockSparse => "block-sparse",
        }
    }
}

impl fmt::Display for PatternFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidPattern {
                pattern: s.to_string(),
                n: 0,
                reason: "unknown pattern family".into(),
            })
    }
}

/// A sparsity family together with its size hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparsityPattern {
    /// Causal local band of `window` positions plus `sinks` global columns.
    Triangular { window: usize, sinks: usize },
    /// `k_v` full columns plus `k_s` diagonals.
    VerticalSlash { k_v: usize, k_s: usize },
    /// `k_b` key blocks of side `block` per query block.
    BlockSparse { block: usize, k_b: usize },
}

impl SparsityPattern {
    pub fn family(&self) -> PatternFamily {
        match self {
            SparsityPattern::Triangular { .. } => PatternFamily::Triangular,
            SparsityPattern::VerticalSlash { .. } => PatternFamily::VerticalSlash,
            SparsityPattern::BlockSparse { .. } => PatternFamily::BlockSparse,
        }
    }

    /// Checks the hyperparameters against a length-`n` input.
    pub fn validate(&self, n: usize) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidPattern {
                pattern: self.to_string(),
                n,
                reason,
            })
        };
        if n == 0 {
            return fail("length must be positive".into());
        }
        match *self {
            SparsityPattern::Triangular { window, sinks } => {
                if window == 0 || window > n {
                    return fail(format!("window must be in 1..={n}"));
                }
                if sinks > n {
                    return fail(format!("sinks must be in 0..={n}"));
                }
            }
            SparsityPattern::VerticalSlash { k_v, k_s } => {
                if k_v == 0 || k_v > n || k_s == 0 || k_s > n {
                    return fail(format!("k_v and k_s must be in 1..={n}"));
                }
            }
            SparsityPattern::BlockSparse { block, k_b } => {
                if block == 0 || block > n {
                    return fail(format!("block side must be in 1..={n}"));
                }
                let g = n.div_ceil(block);
                if k_b == 0 || k_b > g {
                    return fail(format!("k_b must be in 1..={g}"));
                }
            }
        }
        Ok(())
    }

    /// Nearest legal pattern for length `n` (`n >= 1`).
    pub fn clamp_to(&self, n: usize) -> Self {
        let n = n.max(1);
        match *self {
            SparsityPattern::Triangular { window, sinks } => SparsityPattern::Triangular {
                window: window.clamp(1, n),
                sinks: sinks.min(n),
            },
            SparsityPattern::VerticalSlash { k_v, k_s } => SparsityPattern::VerticalSlash {
                k_v: k_v.clamp(1, n),
                k_s: k_s.clamp(1, n),
            },
            SparsityPattern::BlockSparse { block, k_b } => {
                let block = block.clamp(1, n);
                SparsityPattern::BlockSparse {
                    block,
                    k_b: k_b.clamp(1, n.div_ceil(block)),
                }
            }
        }
    }

    /// Pattern of `family` whose nominal coverage is `density` of the causal
    /// triangle `n(n+1)/2`. For blocks, `block_side` is the preferred side;
    /// smaller sides are tried when it cannot get within 5% of the target.
    pub fn at_density(family: PatternFamily, n: usize, density: f64, block_side: usize) -> Self {
        let n = n.max(1);
        let half_band = density * (n as f64 + 1.0) / 2.0;
        let p = match family {
            PatternFamily::Triangular => SparsityPattern::Triangular {
                window: half_band.round() as usize,
                sinks: 0,
            },
            PatternFamily::VerticalSlash => {
                let k = (half_band / 2.0).round() as usize;
                SparsityPattern::VerticalSlash { k_v: k, k_s: k }
            }
            PatternFamily::BlockSparse => {
                let target = density * (n * (n + 1) / 2) as f64;
                block_at_density(n, target, block_side)
            }
        };
        p.clamp_to(n)
    }

    /// Parameters under which the pattern covers the whole causal triangle.
    pub fn full_coverage(family: PatternFamily, n: usize, block_side: usize) -> Self {
        let n = n.max(1);
        match family {
            PatternFamily::Triangular => SparsityPattern::Triangular {
                window: n,
                sinks: 0,
            },
            PatternFamily::VerticalSlash => SparsityPattern::VerticalSlash { k_v: n, k_s: n },
            PatternFamily::BlockSparse => {
                let block = block_side.clamp(1, n);
                SparsityPattern::BlockSparse {
                    block,
                    k_b: n.div_ceil(block),
                }
            }
        }
    }

    /// Scales the length-proportional hyperparameters (window, sinks, `k_v`,
    /// `k_s`) by `factor`, keeping block side and `k_b`, then clamps to `n`.
    pub fn rescale_to(&self, factor: f64, n: usize) -> Self {
        let s = |x: usize| (x as f64 * factor).round() as usize;
        let p = match *self {
            SparsityPattern::Triangular { window, sinks } => SparsityPattern::Triangular {
                window: s(window),
                sinks: s(sinks),
            },
            SparsityPattern::VerticalSlash { k_v, k_s } => SparsityPattern::VerticalSlash {
                k_v: s(k_v),
                k_s: s(k_s),
            },
            p @ SparsityPattern::BlockSparse { .. } => p,
        };
        p.clamp_to(n)
    }
}

/// Closest block pattern to `target` positions, scanning sides downward from
/// `preferred` and stopping at the first side within 5% of the target.
fn block_at_density(n: usize, target: f64, preferred: usize) -> SparsityPattern {
    let mut best: Option<(f64, SparsityPattern)> = None;
    for block in (1..=preferred.clamp(1, n)).rev() {
        let g = n.div_ceil(block);
        // positions grow monotonically in k_b
        let (mut lo, mut hi) = (1, g);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if (flops::block_positions(n, block, mid) as f64) < target {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        for k_b in [lo.saturating_sub(1).max(1), lo] {
            let dist = (flops::block_positions(n, block, k_b) as f64 - target).abs();
            if best.map_or(true, |(d, _)| dist < d) {
                best = Some((dist, SparsityPattern::BlockSparse { block, k_b }));
            }
        }
        if best.is_some_and(|(d, _)| d <= 0.05 * target) {
            break;
        }
    }
    best.map(|(_, p)| p)
        .unwrap_or(SparsityPattern::BlockSparse { block: 1, k_b: 1 })
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityPattern::Triangular { window, sinks } => {
                write!(f, "triangular:w={window}:s={sinks}")
            }
            SparsityPattern::VerticalSlash { k_v, k_s } => {
                write!(f, "vertical-slash:kv={k_v}:ks={k_s}")
            }
            SparsityPattern::BlockSparse { block, k_b } => {
                write!(f, "block-sparse:b={block}:kb={k_b}")
            }
        }
    }
}

impl FromStr for SparsityPattern {
    type Err = Error;

    /// Parses the `Display` form, e.g. `vertical-slash:kv=4:ks=4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidPattern {
            pattern: s.to_string(),
            n: 0,
            reason: reason.to_string(),
        };
        let mut parts = s.split(':');
        let family: PatternFamily = parts.next().unwrap_or_default().parse()?;
        let mut params = Vec::new();
        for p in parts {
            let (key, value) = p.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let value: usize = value
                .parse()
                .map_err(|_| bad("parameter is not an integer"))?;
            params.push((key, value));
        }
        let get = |key: &str| {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|&(_, v)| v)
                .ok_or_else(|| bad(&format!("missing parameter {key}")))
        };
        let expected = match family {
            PatternFamily::Triangular => ["w", "s"],
            PatternFamily::VerticalSlash => ["kv", "ks"],
            PatternFamily::BlockSparse => ["b", "kb"],
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !expected.contains(k)) {
            return Err(bad(&format!("unknown parameter {k}")));
        }
        Ok(match family {
            PatternFamily::Triangular => SparsityPattern::Triangular {
                window: get("w")?,
                sinks: get("s").unwrap_or(0),
            },
            PatternFamily::VerticalSlash => SparsityPattern::VerticalSlash {
                k_v: get("kv")?,
                k_s: get("ks")?,
            },
            PatternFamily::BlockSparse => SparsityPattern::BlockSparse {
                block: get("b")?,
                k_b: get("kb")?,
            },
        })
    }
}
