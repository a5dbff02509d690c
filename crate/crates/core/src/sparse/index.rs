use crate::error::{Error, Result};

/// Selected key blocks of side `side`, one sorted list per query block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSelection {
    side: usize,
    rows: Vec<Vec<usize>>,
}

impl BlockSelection {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Selected key blocks of query block `g`.
    pub fn key_blocks(&self, g: usize) -> &[usize] {
        &self.rows[g]
    }

    pub fn num_query_blocks(&self) -> usize {
        self.rows.len()
    }

    /// All `(query block, key block)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(g, ks)| ks.iter().map(move |&k| (g, k)))
    }
}

/// The realized set of attention positions, stored structurally.
///
/// A position `(i, j)` is present when `j <= i` and at least one of the
/// following holds: `j` is a selected column, `i - j` is a selected diagonal
/// offset, `(i / b, j / b)` is a selected block, or `i == j` and the main
/// diagonal is forced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndex {
    n: usize,
    columns: Vec<usize>,
    diagonals: Vec<usize>,
    blocks: Option<BlockSelection>,
    always_diagonal: bool,
}

impl SparseIndex {
    pub fn new(
        n: usize,
        mut columns: Vec<usize>,
        mut diagonals: Vec<usize>,
        blocks: Option<(usize, Vec<Vec<usize>>)>,
        always_diagonal: bool,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidIndex("length must be positive".into()));
        }
        columns.sort_unstable();
        columns.dedup();
        diagonals.sort_unstable();
        diagonals.dedup();
        if columns.last().is_some_and(|&c| c >= n) {
            return Err(Error::InvalidIndex(format!(
                "column out of range for n={n}"
            )));
        }
        if diagonals.last().is_some_and(|&o| o >= n) {
            return Err(Error::InvalidIndex(format!(
                "diagonal offset out of range for n={n}"
            )));
        }
        let blocks = match blocks {
            None => None,
            Some((side, mut rows)) => {
                if side == 0 || side > n {
                    return Err(Error::InvalidIndex(format!(
                        "block side {side} invalid for n={n}"
                    )));
                }
                if rows.len() != n.div_ceil(side) {
                    return Err(Error::InvalidIndex(format!(
                        "expected {} query blocks, found {}",
                        n.div_ceil(side),
                        rows.len()
                    )));
                }
                for (g, r) in rows.iter_mut().enumerate() {
                    r.sort_unstable();
                    r.dedup();
                    if r.last().is_some_and(|&k| k > g) {
                        return Err(Error::InvalidIndex(format!(
                            "query block {g} selects a future key block"
                        )));
                    }
                }
                Some(BlockSelection { side, rows })
            }
        };
        Ok(Self {
            n,
            columns,
            diagonals,
            blocks,
            always_diagonal,
        })
    }

    /// Every causal position.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            columns: Vec::new(),
            diagonals: (0..n).collect(),
            blocks: None,
            always_diagonal: true,
        }
    }

    /// Only `(i, i)`.
    pub fn main_diagonal(n: usize) -> Self {
        Self {
            n,
            columns: Vec::new(),
            diagonals: Vec::new(),
            blocks: None,
            always_diagonal: true,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn diagonals(&self) -> &[usize] {
        &self.diagonals
    }

    pub fn blocks(&self) -> Option<&BlockSelection> {
        self.blocks.as_ref()
    }

    pub fn always_diagonal(&self) -> bool {
        self.always_diagonal
    }

    /// Membership test for a single position.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        if j > i || i >= self.n {
            return false;
        }
        (self.always_diagonal && i == j)
            || self.columns.binary_search(&j).is_ok()
            || self.diagonals.binary_search(&(i - j)).is_ok()
            || self
                .blocks
                .as_ref()
                .is_some_and(|b| b.rows[i / b.side].binary_search(&(j / b.side)).is_ok())
    }

    /// Writes the sorted, distinct columns present in row `i` into `out`.
    pub fn row_positions(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut sources = 0;
        if !self.columns.is_empty() {
            sources += 1;
            out.extend(self.columns.iter().copied().take_while(|&c| c <= i));
        }
        if !self.diagonals.is_empty() {
            sources += 1;
            // descending offsets give ascending columns
            out.extend(
                self.diagonals
                    .iter()
                    .rev()
                    .filter(|&&o| o <= i)
                    .map(|&o| i - o),
            );
        }
        if let Some(b) = &self.blocks {
            sources += 1;
            for &kb in &b.rows[i / b.side] {
                let start = kb * b.side;
                let end = ((kb + 1) * b.side).min(i + 1);
                out.extend(start..end);
            }
        }
        if self.always_diagonal {
            sources += 1;
            out.push(i);
        }
        if sources > 1 {
            out.sort_unstable();
            out.dedup();
        }
    }

    /// Number of distinct causal positions covered.
    pub fn realized_size(&self) -> usize {
        let mut buf = Vec::new();
        (0..self.n)
            .map(|i| {
                self.row_positions(i, &mut buf);
                buf.len()
            })
            .sum()
    }
}

/// Distinct causal positions of `idx`, which must be realized for length `n`.
pub fn realized_size(idx: &SparseIndex, n: usize) -> Result<usize> {
    if idx.n() != n {
        return Err(Error::InvalidIndex(format!(
            "index realized for n={}, asked for n={n}",
            idx.n()
        )));
    }
    Ok(idx.realized_size())
}
