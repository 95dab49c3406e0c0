//! Interaction-log ingestion: parsing, like/dislike binarization, k-core
//! filtering and reproducible train / validation / test splits.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("input contains no events")]
    EmptyFile,
    #[error("k-core filtering removed every interaction")]
    AllFiltered,
    #[error("time-ordered split requires a timestamp on every cell")]
    MissingTimestamps,
    #[error("invalid split specification: {0}")]
    InvalidSplit(String),
    #[error("invalid interaction matrix: {0}")]
    InvalidMatrix(String),
    #[error("unknown event format `{0}` (expected ml, tsv or csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One raw interaction as read from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub user: String,
    pub item: String,
    /// Star rating or play count.
    pub value: f64,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    /// `user::item::rating::timestamp`
    MovieLens,
    /// `user<TAB>item<TAB>value[<TAB>timestamp]`
    Tsv,
    /// `user,item,value[,timestamp]` with a header line.
    Csv,
}

impl FromStr for EventFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml" | "movielens" => Ok(EventFormat::MovieLens),
            "tsv" => Ok(EventFormat::Tsv),
            "csv" => Ok(EventFormat::Csv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for EventFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventFormat::MovieLens => "ml",
            EventFormat::Tsv => "tsv",
            EventFormat::Csv => "csv",
        })
    }
}

pub fn parse_events(path: impl AsRef<Path>, format: EventFormat) -> Result<Vec<RawEvent>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text, format)
}

/// Parses events from in-memory text. Blank lines are skipped; line numbers
/// in errors are 1-based physical lines.
pub fn parse_str(text: &str, format: EventFormat) -> Result<Vec<RawEvent>, IngestError> {
    let mut events = Vec::new();
    let mut lines = text.lines().enumerate();

    if format == EventFormat::Csv {
        let (idx, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or(IngestError::EmptyFile)?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
        if cols != ["user", "item", "value"] && cols != ["user", "item", "value", "timestamp"] {
            return Err(IngestError::MalformedLine {
                line: idx + 1,
                reason: format!("unexpected csv header `{}`", header.trim_end()),
            });
        }
    }

    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            EventFormat::MovieLens => line.split("::").collect(),
            EventFormat::Tsv => line.split('\t').collect(),
            EventFormat::Csv => line.split(',').collect(),
        };
        events.push(parse_fields(&fields, idx + 1)?);
    }

    if events.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(events)
}

fn parse_fields(fields: &[&str], line: usize) -> Result<RawEvent, IngestError> {
    let malformed = |reason: String| IngestError::MalformedLine { line, reason };
    if fields.len() != 3 && fields.len() != 4 {
        return Err(malformed(format!("expected 3 or 4 fields, found {}", fields.len())));
    }
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err(malformed("empty user or item id".into()));
    }
    let value: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| malformed(format!("non-numeric value `{}`", fields[2].trim())))?;
    if !value.is_finite() {
        return Err(malformed(format!("non-finite value `{}`", fields[2].trim())));
    }
    let timestamp = match fields.get(3) {
        Some(ts) => Some(
            ts.trim()
                .parse::<u64>()
                .map_err(|_| malformed(format!("invalid timestamp `{}`", ts.trim())))?,
        ),
        None => None,
    };
    Ok(RawEvent {
        user: user.to_string(),
        item: item.to_string(),
        value,
        timestamp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Liked,
    Disliked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinarizePolicy {
    /// Star ratings: `>= like_min` is liked, `<= dislike_max` is disliked,
    /// anything in between is unknown and dropped.
    Explicit { like_min: f64, dislike_max: f64 },
    /// Consumption counts: `>= like_min_count` is liked. Never produces dislikes.
    Implicit { like_min_count: f64 },
}

impl BinarizePolicy {
    pub fn explicit() -> Self {
        BinarizePolicy::Explicit {
            like_min: 4.0,
            dislike_max: 2.0,
        }
    }

    pub fn implicit() -> Self {
        BinarizePolicy::Implicit { like_min_count: 1.0 }
    }

    pub fn label(&self, value: f64) -> Option<Label> {
        match *self {
            BinarizePolicy::Explicit { like_min, dislike_max } => {
                if value >= like_min {
                    Some(Label::Liked)
                } else if value <= dislike_max {
                    Some(Label::Disliked)
                } else {
                    None
                }
            }
            BinarizePolicy::Implicit { like_min_count } => (value >= like_min_count).then_some(Label::Liked),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub user: String,
    pub item: String,
    pub label: Label,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct Binarized {
    pub cells: Vec<LabeledEvent>,
    pub dropped: usize,
}

pub fn binarize(events: &[RawEvent], policy: BinarizePolicy) -> Binarized {
    let mut out = Binarized::default();
    for ev in events {
        match policy.label(ev.value) {
            Some(label) => out.cells.push(LabeledEvent {
                user: ev.user.clone(),
                item: ev.item.clone(),
                label,
                timestamp: ev.timestamp,
            }),
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        info!("binarize: dropped {} events with undetermined preference", out.dropped);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub user: u32,
    pub item: u32,
    pub label: Label,
    pub timestamp: Option<u64>,
}

/// Sparse user x item matrix of labelled cells over a dense index space.
///
/// Cells are kept sorted by `(user, item)` with at most one cell per pair.
/// Train / validation / test views share the same index maps, so a user or
/// item index means the same thing in every view.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    cells: Vec<Cell>,
    user_ids: Arc<[String]>,
    item_ids: Arc<[String]>,
}

impl InteractionMatrix {
    pub fn new(
        mut cells: Vec<Cell>,
        user_ids: impl Into<Arc<[String]>>,
        item_ids: impl Into<Arc<[String]>>,
    ) -> Result<Self, IngestError> {
        let user_ids = user_ids.into();
        let item_ids = item_ids.into();
        let (m, n) = (user_ids.len(), item_ids.len());
        cells.sort_by_key(|c| (c.user, c.item));
        for w in cells.windows(2) {
            if (w[0].user, w[0].item) == (w[1].user, w[1].item) {
                return Err(IngestError::InvalidMatrix(format!(
                    "duplicate cell ({}, {})",
                    w[0].user, w[0].item
                )));
            }
        }
        if let Some(c) = cells.iter().find(|c| c.user as usize >= m || c.item as usize >= n) {
            return Err(IngestError::InvalidMatrix(format!(
                "cell ({}, {}) outside {}x{}",
                c.user, c.item, m, n
            )));
        }
        Ok(InteractionMatrix {
            n_users: m,
            n_items: n,
            cells,
            user_ids,
            item_ids,
        })
    }

    /// Builds a matrix with synthetic ids `u0..`, `i0..`.
    pub fn from_cells(n_users: usize, n_items: usize, cells: Vec<Cell>) -> Result<Self, IngestError> {
        let users: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
        let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        Self::new(cells, users, items)
    }

    /// A view over the same index space holding a different set of cells.
    pub fn with_cells(&self, cells: Vec<Cell>) -> Self {
        let mut cells = cells;
        cells.sort_by_key(|c| (c.user, c.item));
        InteractionMatrix {
            n_users: self.n_users,
            n_items: self.n_items,
            cells,
            user_ids: Arc::clone(&self.user_ids),
            item_ids: Arc::clone(&self.item_ids),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn nnz(&self) -> usize {
        self.cells.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn has_dislikes(&self) -> bool {
        self.cells.iter().any(|c| c.label == Label::Disliked)
    }

    /// Per-user sorted item lists carrying `label`.
    pub fn items_by_user(&self, label: Label) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_users];
        for c in self.cells.iter().filter(|c| c.label == label) {
            out[c.user as usize].push(c.item);
        }
        out
    }

    /// Per-item sorted user lists carrying `label`.
    pub fn users_by_item(&self, label: Label) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_items];
        for c in self.cells.iter().filter(|c| c.label == label) {
            out[c.item as usize].push(c.user);
        }
        out
    }

    pub fn liked_by_user(&self) -> Vec<Vec<u32>> {
        self.items_by_user(Label::Liked)
    }
}

/// Iteratively removes users with fewer than `user_min` interactions (or no
/// liked interaction) and items with fewer than `item_min` interactions until
/// a fixed point, then assigns dense indices in first-appearance order.
///
/// Repeated `(user, item)` pairs keep the last occurrence.
pub fn kcore_filter(
    cells: &[LabeledEvent],
    user_min: usize,
    item_min: usize,
) -> Result<InteractionMatrix, IngestError> {
    if user_min == 0 || item_min == 0 {
        return Err(IngestError::InvalidMatrix("core thresholds must be at least 1".into()));
    }

    let mut user_lookup: HashMap<&str, u32> = HashMap::new();
    let mut item_lookup: HashMap<&str, u32> = HashMap::new();
    let mut users: Vec<&str> = Vec::new();
    let mut items: Vec<&str> = Vec::new();
    let mut by_pair: HashMap<(u32, u32), usize> = HashMap::new();
    let mut raw: Vec<Cell> = Vec::new();

    for ev in cells {
        let u = *user_lookup.entry(&ev.user).or_insert_with(|| {
            users.push(&ev.user);
            (users.len() - 1) as u32
        });
        let i = *item_lookup.entry(&ev.item).or_insert_with(|| {
            items.push(&ev.item);
            (items.len() - 1) as u32
        });
        let cell = Cell {
            user: u,
            item: i,
            label: ev.label,
            timestamp: ev.timestamp,
        };
        match by_pair.get(&(u, i)) {
            Some(&pos) => raw[pos] = cell,
            None => {
                by_pair.insert((u, i), raw.len());
                raw.push(cell);
            }
        }
    }

    let mut alive = vec![true; raw.len()];
    let mut user_ok = vec![true; users.len()];
    let mut item_ok = vec![true; items.len()];
    let mut rounds = 0usize;
    loop {
        let mut user_count = vec![0usize; users.len()];
        let mut user_likes = vec![0usize; users.len()];
        let mut item_count = vec![0usize; items.len()];
        for (c, _) in raw.iter().zip(&alive).filter(|(_, a)| **a) {
            user_count[c.user as usize] += 1;
            item_count[c.item as usize] += 1;
            if c.label == Label::Liked {
                user_likes[c.user as usize] += 1;
            }
        }
        let mut changed = false;
        for u in 0..users.len() {
            if user_ok[u] && (user_count[u] < user_min || user_likes[u] == 0) {
                user_ok[u] = false;
                changed = true;
            }
        }
        for i in 0..items.len() {
            if item_ok[i] && item_count[i] < item_min {
                item_ok[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        rounds += 1;
        for (c, a) in raw.iter().zip(alive.iter_mut()) {
            *a = *a && user_ok[c.user as usize] && item_ok[c.item as usize];
        }
    }

    let mut user_map = vec![u32::MAX; users.len()];
    let mut item_map = vec![u32::MAX; items.len()];
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut kept = Vec::new();
    for (c, _) in raw.iter().zip(&alive).filter(|(_, a)| **a) {
        let (u, i) = (c.user as usize, c.item as usize);
        if user_map[u] == u32::MAX {
            user_map[u] = user_ids.len() as u32;
            user_ids.push(users[u].to_string());
        }
        if item_map[i] == u32::MAX {
            item_map[i] = item_ids.len() as u32;
            item_ids.push(items[i].to_string());
        }
        kept.push(Cell {
            user: user_map[u],
            item: item_map[i],
            ..*c
        });
    }
    if kept.is_empty() {
        return Err(IngestError::AllFiltered);
    }
    info!(
        "k-core ({user_min}, {item_min}): {} users, {} items, {} cells after {rounds} removal rounds",
        user_ids.len(),
        item_ids.len(),
        kept.len()
    );
    InteractionMatrix::new(kept, user_ids, item_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Global time order: the last `test_frac` of cells is the test set.
    TimeOrdered,
    Random,
}

impl FromStr for SplitMode {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" | "time-ordered" => Ok(SplitMode::TimeOrdered),
            "random" => Ok(SplitMode::Random),
            other => Err(IngestError::InvalidSplit(format!("unknown split mode `{other}`"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::TimeOrdered => "time-ordered",
            SplitMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub mode: SplitMode,
    pub seed: u64,
    pub fold_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            valid_frac: 0.1,
            test_frac: 0.2,
            mode: SplitMode::Random,
            seed: 0,
            fold_count: 1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac == 0.0 {
            return Err(IngestError::InvalidSplit(format!("fractions out of range: {fracs:?}")));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidSplit(format!("fractions {fracs:?} do not sum to 1")));
        }
        if self.fold_count == 0 {
            return Err(IngestError::InvalidSplit("fold_count must be at least 1".into()));
        }
        Ok(())
    }

    /// The spec for fold `fold`, carrying that fold's derived seed.
    pub fn for_fold(&self, fold: usize) -> SplitSpec {
        SplitSpec {
            seed: derive_seed(self.seed, fold as u64),
            ..*self
        }
    }
}

/// Mixes a base seed with an index (SplitMix64 finalizer) so that derived
/// streams for neighbouring indices are unrelated.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionMatrix,
    pub valid: InteractionMatrix,
    pub test: InteractionMatrix,
    /// Validation cells dropped because their user or item has no train cell.
    pub dropped_valid: usize,
    pub dropped_test: usize,
    pub spec: SplitSpec,
}

impl Split {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            mode: self.spec.mode,
            seed: self.spec.seed,
            input: self.train.nnz() + self.valid.nnz() + self.test.nnz() + self.dropped_valid + self.dropped_test,
            train: self.train.nnz(),
            valid: self.valid.nnz(),
            test: self.test.nnz(),
            dropped_valid: self.dropped_valid,
            dropped_test: self.dropped_test,
            users: self.train.n_users(),
            items: self.train.n_items(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub input: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub dropped_valid: usize,
    pub dropped_test: usize,
    pub users: usize,
    pub items: usize,
}

impl fmt::Display for SplitManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "users = {}", self.users)?;
        writeln!(f, "items = {}", self.items)?;
        writeln!(f, "cells.input = {}", self.input)?;
        writeln!(f, "cells.train = {}", self.train)?;
        writeln!(f, "cells.valid = {}", self.valid)?;
        writeln!(f, "cells.test = {}", self.test)?;
        writeln!(f, "dropped.valid = {}", self.dropped_valid)?;
        writeln!(f, "dropped.test = {}", self.dropped_test)
    }
}

fn round_count(frac: f64, total: usize) -> usize {
    ((frac * total as f64).round() as usize).min(total)
}

/// Splits `matrix` into train / validation / test views.
///
/// Time-ordered: cells sorted by `(timestamp, user, item)`; the leading
/// `train_frac + valid_frac` share is train+valid, and a seeded uniform
/// sample of it becomes validation. Random: a seeded shuffle is cut
/// 70/10/20. Validation and test cells whose user or item never occurs in
/// train are dropped and counted.
/// Durstenfeld shuffle: for `i` from the end down to 1, swap `i` with
/// `random_range(0..=i)` drawn as a `u32`. Spelled out so a split can be
/// reproduced from the seed without depending on a library's batching.
fn fisher_yates<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..(i + 1) as u32) as usize;
        v.swap(i, j);
    }
}

pub fn split(matrix: &InteractionMatrix, spec: &SplitSpec) -> Result<Split, IngestError> {
    spec.validate()?;
    let cells = matrix.cells();
    let total = cells.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (train_idx, valid_idx, test_idx): (Vec<usize>, Vec<usize>, Vec<usize>) = match spec.mode {
        SplitMode::TimeOrdered => {
            if cells.iter().any(|c| c.timestamp.is_none()) {
                return Err(IngestError::MissingTimestamps);
            }
            let mut order: Vec<usize> = (0..total).collect();
            order.sort_by_key(|&i| (cells[i].timestamp, cells[i].user, cells[i].item));
            let n_head = round_count(spec.train_frac + spec.valid_frac, total);
            let share = spec.valid_frac / (spec.train_frac + spec.valid_frac);
            let n_valid = round_count(share, n_head);
            let mut head = order[..n_head].to_vec();
            fisher_yates(&mut head, &mut rng);
            let valid = head[..n_valid].to_vec();
            let train = head[n_valid..].to_vec();
            (train, valid, order[n_head..].to_vec())
        }
        SplitMode::Random => {
            let mut order: Vec<usize> = (0..total).collect();
            fisher_yates(&mut order, &mut rng);
            let n_train = round_count(spec.train_frac, total);
            let n_valid = round_count(spec.valid_frac, total).min(total - n_train);
            (
                order[..n_train].to_vec(),
                order[n_train..n_train + n_valid].to_vec(),
                order[n_train + n_valid..].to_vec(),
            )
        }
    };

    let train_cells: Vec<Cell> = train_idx.iter().map(|&i| cells[i]).collect();
    let mut seen_user = vec![false; matrix.n_users()];
    let mut seen_item = vec![false; matrix.n_items()];
    for c in &train_cells {
        seen_user[c.user as usize] = true;
        seen_item[c.item as usize] = true;
    }
    let keep = |idx: &[usize]| -> (Vec<Cell>, usize) {
        let (kept, dropped): (Vec<Cell>, Vec<Cell>) = idx
            .iter()
            .map(|&i| cells[i])
            .partition(|c| seen_user[c.user as usize] && seen_item[c.item as usize]);
        (kept, dropped.len())
    };
    let (valid_cells, dropped_valid) = keep(&valid_idx);
    let (test_cells, dropped_test) = keep(&test_idx);
    if dropped_valid + dropped_test > 0 {
        info!("split: dropped {dropped_valid} validation and {dropped_test} test cells unseen in train");
    }

    Ok(Split {
        train: matrix.with_cells(train_cells),
        valid: matrix.with_cells(valid_cells),
        test: matrix.with_cells(test_cells),
        dropped_valid,
        dropped_test,
        spec: *spec,
    })
}
