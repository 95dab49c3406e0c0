//! Co-occurrence pairs from greedy context generation, and the SPPMI
//! matrices built from them.
//!
//! Every list (a user's liked items, a user's disliked items, or the users
//! who liked one item) contributes all ordered pairs of its distinct tokens:
//! each token takes every other token of the list as context. Counts are
//! accumulated per worker and merged, so results do not depend on thread
//! scheduling.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{InteractionMatrix, Label};

#[derive(Debug, Error)]
pub enum CooccurError {
    #[error("pair ({0}, {1}) never co-occurs; PMI is undefined")]
    UndefinedPair(u32, u32),
    #[error("malformed SPPMI dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ordered-pair statistics: `#(i,j)`, `#(i)` and `|D|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCounts {
    dim: usize,
    pairs: HashMap<(u32, u32), u64>,
    marginal: Vec<u64>,
    total: u64,
}

impl PairCounts {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self, i: u32, j: u32) -> u64 {
        self.pairs.get(&(i, j)).copied().unwrap_or(0)
    }

    pub fn marginal(&self, i: u32) -> u64 {
        self.marginal.get(i as usize).copied().unwrap_or(0)
    }

    /// `|D|`, the number of ordered pairs.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), u64)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }
}

/// Emits all `L·(L−1)` ordered pairs of every list over tokens `0..dim`.
/// Lists are deduplicated first; lists shorter than two contribute nothing.
pub fn generate_pairs(dim: usize, lists: &[Vec<u32>]) -> PairCounts {
    let pairs = lists
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<(u32, u32), u64>, list| {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            for (a, &i) in list.iter().enumerate() {
                for (b, &j) in list.iter().enumerate() {
                    if a != b {
                        *acc.entry((i, j)).or_insert(0) += 1;
                    }
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            let (small, mut large) = if a.len() < b.len() { (a, b) } else { (b, std::mem::take(&mut a)) };
            for (k, v) in small {
                *large.entry(k).or_insert(0) += v;
            }
            large
        });

    let mut marginal = vec![0u64; dim];
    let mut total = 0u64;
    for (&(i, _), &c) in &pairs {
        marginal[i as usize] += c;
        total += c;
    }
    PairCounts {
        dim,
        pairs,
        marginal,
        total,
    }
}

/// `log(#(i,j)·|D| / (#(i)·#(j)))`, natural log.
pub fn pmi(counts: &PairCounts, i: u32, j: u32) -> Result<f64, CooccurError> {
    let joint = counts.count(i, j);
    if joint == 0 {
        return Err(CooccurError::UndefinedPair(i, j));
    }
    Ok(pmi_from(joint, counts.total, counts.marginal(i), counts.marginal(j)))
}

fn pmi_from(joint: u64, total: u64, left: u64, right: u64) -> f64 {
    ((joint as f64 * total as f64) / (left as f64 * right as f64)).ln()
}

/// Sparse symmetric nonnegative matrix in CSR form with sorted column
/// indices. Zeros are never stored and the diagonal is always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SppmiMatrix {
    dim: usize,
    shift: f64,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SppmiMatrix {
    pub fn empty(dim: usize) -> Self {
        SppmiMatrix {
            dim,
            shift: 1.0,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(i, j, value)` triples. Non-positive values are skipped.
    /// The caller is responsible for supplying both `(i, j)` and `(j, i)`.
    pub fn from_triplets(dim: usize, shift: f64, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.retain(|t| t.2 > 0.0);
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; dim + 1];
        for t in &triplets {
            indptr[t.0 as usize + 1] += 1;
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        SppmiMatrix {
            dim,
            shift,
            indptr,
            indices: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: u32, j: u32) -> f64 {
        let (cols, vals) = self.row(i as usize);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    /// All stored entries in `(i, j)` order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i as u32, j, v))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Writes `# sppmi dim=<n> s=<s>` followed by `i<TAB>j<TAB>value` lines.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# sppmi dim={} s={}", self.dim, self.shift)?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i}\t{j}\t{v}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self, CooccurError> {
        let mut lines = r.lines();
        let bad = |line: usize, reason: &str| CooccurError::MalformedDump {
            line,
            reason: reason.to_string(),
        };
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let mut dim = None;
        let mut shift = None;
        let rest = header.strip_prefix("# sppmi").ok_or_else(|| bad(1, "bad header"))?;
        for tok in rest.split_whitespace() {
            if let Some(v) = tok.strip_prefix("dim=") {
                dim = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("s=") {
                shift = v.parse::<f64>().ok();
            }
        }
        let dim = dim.ok_or_else(|| bad(1, "missing dim"))?;
        let shift = shift.ok_or_else(|| bad(1, "missing s"))?;
        let mut triplets = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (f.len() == 3)
                .then(|| Some((f[0].parse::<u32>().ok()?, f[1].parse::<u32>().ok()?, f[2].parse::<f64>().ok()?)))
                .flatten();
            match parsed {
                Some((i, j, v)) if (i as usize) < dim && (j as usize) < dim => triplets.push((i, j, v)),
                _ => return Err(bad(idx + 2, "expected i<TAB>j<TAB>value within dim")),
            }
        }
        Ok(Self::from_triplets(dim, shift, triplets))
    }
}

/// `max(PMI(i,j) − log s, 0)` over every counted pair.
pub fn build_sppmi(counts: &PairCounts, shift: f64) -> SppmiMatrix {
    if shift < 1.0 {
        warn!("SPPMI shift s = {shift} < 1 admits negative PMI values and densifies the matrix");
    }
    let log_shift = shift.ln();
    let triplets = counts
        .pairs
        .iter()
        .filter_map(|(&(i, j), &joint)| {
            let v = pmi_from(joint, counts.total, counts.marginal[i as usize], counts.marginal[j as usize]) - log_shift;
            (v > 0.0).then_some((i, j, v))
        })
        .collect();
    SppmiMatrix::from_triplets(counts.dim, shift, triplets)
}

/// SPPMI over arbitrary token lists of dimension `dim`.
pub fn build_from_lists(dim: usize, lists: &[Vec<u32>], shift: f64) -> SppmiMatrix {
    build_sppmi(&generate_pairs(dim, lists), shift)
}

/// Co-liked item matrix X (n x n) from each user's liked items.
pub fn build_x(train: &InteractionMatrix, shift: f64) -> SppmiMatrix {
    build_from_lists(train.n_items(), &train.items_by_user(Label::Liked), shift)
}

/// Co-disliked item matrix Y (n x n) from each user's disliked items.
pub fn build_y(train: &InteractionMatrix, shift: f64) -> SppmiMatrix {
    build_from_lists(train.n_items(), &train.items_by_user(Label::Disliked), shift)
}

/// User co-occurrence matrix Z (m x m) from the users who liked each item.
pub fn build_z(train: &InteractionMatrix, shift: f64) -> SppmiMatrix {
    build_from_lists(train.n_users(), &train.users_by_item(Label::Liked), shift)
}
