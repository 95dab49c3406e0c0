//! Ranking metrics, per-activity-group breakdowns and fold-level
//! significance tests.
//!
//! Conventions: ranks start at 1; Recall@N and AP@N divide by
//! `min(N, |relevant|)`; candidate rankings exclude the user's known liked
//! items and break score ties by ascending item index; averages are macro
//! (per user, then mean) over users with at least one relevant item.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::io::{self, Write};

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::ingest::{InteractionMatrix, Label};
use crate::model::ModelState;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("no user has a relevant test item")]
    NoTestUsers,
    #[error("need at least 2 folds per side, got {0} and {1}")]
    InsufficientFolds(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn hits<'a, T: Eq + Hash>(ranked: &'a [T], relevant: &'a HashSet<T>, n: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(r, _)| r + 1)
}

/// `|top-N ∩ relevant| / min(N, |relevant|)`
pub fn recall_at<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, n: usize) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let found = hits(ranked, relevant, n).count();
    Ok(found as f64 / n.min(relevant.len()) as f64)
}

/// DCG@N over binary relevance with `1/log2(r+1)` discounts, divided by the
/// ideal DCG@N.
pub fn ndcg_at<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, n: usize) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = hits(ranked, relevant, n).map(discount).sum();
    let idcg: f64 = (1..=n.min(relevant.len())).map(discount).sum();
    Ok(dcg / idcg)
}

/// Sum of precision@r over hit ranks r within the top N, divided by
/// `min(N, |relevant|)`.
pub fn map_at<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, n: usize) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let ap: f64 = hits(ranked, relevant, n)
        .enumerate()
        .map(|(h, r)| (h + 1) as f64 / r as f64)
        .sum();
    Ok(ap / n.min(relevant.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Recall,
    Ndcg,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Recall, Metric::Ndcg, Metric::Map];

    pub fn compute(self, ranked: &[u32], relevant: &HashSet<u32>, n: usize) -> Result<f64, EvalError> {
        match self {
            Metric::Recall => recall_at(ranked, relevant, n),
            Metric::Ndcg => ndcg_at(ranked, relevant, n),
            Metric::Map => map_at(ranked, relevant, n),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
            Metric::Map => "map",
        })
    }
}

/// The `depth` best items by descending score, ties by ascending index,
/// skipping the sorted `exclude` list.
pub fn rank_items(scores: &[f64], exclude: &[u32], depth: usize) -> Vec<u32> {
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|p| exclude.binary_search(p).is_err())
        .collect();
    let order = |a: &u32, b: &u32| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    if depth < candidates.len() {
        candidates.select_nth_unstable_by(depth, order);
        candidates.truncate(depth);
    }
    candidates.sort_unstable_by(order);
    candidates
}

/// Per-user relevant items plus the items to keep out of their rankings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingTask {
    exclude: Vec<Vec<u32>>,
    relevant: Vec<Vec<u32>>,
}

impl RankingTask {
    pub fn new(mut exclude: Vec<Vec<u32>>, mut relevant: Vec<Vec<u32>>) -> Self {
        assert_eq!(exclude.len(), relevant.len(), "one exclusion list per user");
        for list in exclude.iter_mut().chain(relevant.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        RankingTask { exclude, relevant }
    }

    /// Relevant items are the liked cells of `target`; the liked cells of
    /// `known` (train, and validation when scoring test) are excluded.
    pub fn from_matrices(target: &InteractionMatrix, known: &[&InteractionMatrix]) -> Self {
        let mut exclude = vec![Vec::new(); target.n_users()];
        for m in known {
            for (u, items) in m.items_by_user(Label::Liked).into_iter().enumerate() {
                exclude[u].extend(items);
            }
        }
        RankingTask::new(exclude, target.items_by_user(Label::Liked))
    }

    pub fn n_users(&self) -> usize {
        self.relevant.len()
    }

    pub fn relevant(&self, u: usize) -> &[u32] {
        &self.relevant[u]
    }

    pub fn excluded(&self, u: usize) -> &[u32] {
        &self.exclude[u]
    }

    /// Users with at least one relevant item.
    pub fn users(&self) -> Vec<usize> {
        (0..self.relevant.len()).filter(|&u| !self.relevant[u].is_empty()).collect()
    }

    /// Mean NDCG@n of `state` over the task's users, 0 when there are none.
    pub fn mean_ndcg(&self, state: &ModelState, n: usize) -> f64 {
        let users = self.users();
        if users.is_empty() {
            return 0.0;
        }
        let sum: f64 = users
            .par_iter()
            .map(|&u| {
                let scores = state.predict(u).expect("user index within state");
                let ranked = rank_items(&scores, &self.exclude[u], n);
                let relevant: HashSet<u32> = self.relevant[u].iter().copied().collect();
                ndcg_at(&ranked, &relevant, n).expect("nonempty relevant set")
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        sum / users.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UserGroup {
    Cold,
    Warm,
    Active,
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserGroup::Cold => "cold",
            UserGroup::Warm => "warm",
            UserGroup::Active => "active",
        })
    }
}

/// Activity groups over users sorted ascending by training liked count
/// (ties by user index): positions below `⌊lower·U⌋` are cold, positions
/// from `⌊upper·U⌋` on are highly active, the rest warm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserGroupSpec {
    pub lower: f64,
    pub upper: f64,
}

impl Default for UserGroupSpec {
    fn default() -> Self {
        UserGroupSpec { lower: 0.2, upper: 0.8 }
    }
}

impl UserGroupSpec {
    /// Group of each user in `users`, in the same order.
    pub fn assign(&self, users: &[usize], activity: &[usize]) -> Vec<UserGroup> {
        let total = users.len();
        let cold_end = (self.lower * total as f64).floor() as usize;
        let active_start = (self.upper * total as f64).floor() as usize;
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by_key(|&i| (activity[users[i]], users[i]));
        let mut groups = vec![UserGroup::Warm; total];
        for (pos, &i) in order.iter().enumerate() {
            groups[i] = if pos < cold_end {
                UserGroup::Cold
            } else if pos >= active_start {
                UserGroup::Active
            } else {
                UserGroup::Warm
            };
        }
        groups
    }
}

pub type MetricTable = BTreeMap<(Metric, usize), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: UserGroup,
    pub users: usize,
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fold: usize,
    pub cutoffs: Vec<usize>,
    pub users: usize,
    pub overall: MetricTable,
    pub groups: Vec<GroupReport>,
}

impl EvalReport {
    pub fn get(&self, metric: Metric, n: usize) -> Option<f64> {
        self.overall.get(&(metric, n)).copied()
    }

    pub fn group(&self, group: UserGroup) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == group)
    }

    pub fn write_csv_header<W: Write>(mut w: W) -> io::Result<()> {
        writeln!(w, "fold,group,metric,N,value")
    }

    /// Rows `fold,group,metric,N,value`; the overall rows use group `all`.
    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ((metric, n), v) in &self.overall {
            writeln!(w, "{},all,{metric},{n},{v}", self.fold)?;
        }
        for g in self.groups.iter().filter(|g| g.users > 0) {
            for ((metric, n), v) in &g.metrics {
                writeln!(w, "{},{},{metric},{n},{v}", self.fold, g.group)?;
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        Self::write_csv_header(&mut w)?;
        self.write_csv_rows(w)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("fold {}: {} users", self.fold, self.users);
        for g in &self.groups {
            s.push_str(&format!(", {} {}", g.users, g.group));
        }
        s.push('\n');
        for metric in Metric::ALL {
            let cells: Vec<String> = self
                .cutoffs
                .iter()
                .filter_map(|&n| self.get(metric, n).map(|v| format!("@{n}={v:.4}")))
                .collect();
            s.push_str(&format!("  {metric:<6} {}\n", cells.join(" ")));
        }
        s
    }
}

fn mean_table(rows: &[&Vec<f64>], keys: &[(Metric, usize)]) -> MetricTable {
    let mut table = MetricTable::new();
    if rows.is_empty() {
        return table;
    }
    for (idx, key) in keys.iter().enumerate() {
        let sum: f64 = rows.iter().map(|r| r[idx]).sum();
        table.insert(*key, sum / rows.len() as f64);
    }
    table
}

/// Evaluates arbitrary per-user score vectors against `task`.
/// `activity[u]` is the user's training liked count, used for grouping.
pub fn evaluate_with<F>(
    score: F,
    task: &RankingTask,
    activity: &[usize],
    cutoffs: &[usize],
    groups: &UserGroupSpec,
    fold: usize,
) -> Result<EvalReport, EvalError>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    if activity.len() != task.n_users() {
        return Err(EvalError::DimensionMismatch(format!(
            "{} activity counts for {} users",
            activity.len(),
            task.n_users()
        )));
    }
    let users = task.users();
    if users.is_empty() {
        return Err(EvalError::NoTestUsers);
    }
    let depth = cutoffs.iter().copied().max().unwrap_or(0);
    let keys: Vec<(Metric, usize)> = Metric::ALL
        .iter()
        .flat_map(|&m| cutoffs.iter().map(move |&n| (m, n)))
        .collect();

    let per_user: Vec<Vec<f64>> = users
        .par_iter()
        .map(|&u| {
            let ranked = rank_items(&score(u), task.excluded(u), depth);
            let relevant: HashSet<u32> = task.relevant(u).iter().copied().collect();
            keys.iter()
                .map(|&(m, n)| m.compute(&ranked, &relevant, n).expect("nonempty relevant set"))
                .collect()
        })
        .collect();

    let assigned = groups.assign(&users, activity);
    let group_reports = [UserGroup::Cold, UserGroup::Warm, UserGroup::Active]
        .into_iter()
        .map(|g| {
            let rows: Vec<&Vec<f64>> = per_user.iter().zip(&assigned).filter(|(_, a)| **a == g).map(|(r, _)| r).collect();
            GroupReport {
                group: g,
                users: rows.len(),
                metrics: mean_table(&rows, &keys),
            }
        })
        .collect();

    let all: Vec<&Vec<f64>> = per_user.iter().collect();
    Ok(EvalReport {
        fold,
        cutoffs: cutoffs.to_vec(),
        users: users.len(),
        overall: mean_table(&all, &keys),
        groups: group_reports,
    })
}

/// Scores every test user with `state`, excluding the liked items of
/// `train` (and `valid`, when given) from the candidate rankings.
pub fn evaluate(
    state: &ModelState,
    train: &InteractionMatrix,
    test: &InteractionMatrix,
    valid: Option<&InteractionMatrix>,
    cutoffs: &[usize],
    groups: &UserGroupSpec,
    fold: usize,
) -> Result<EvalReport, EvalError> {
    if state.n_users() != test.n_users() || state.n_items() != test.n_items() {
        return Err(EvalError::DimensionMismatch(format!(
            "model is {}x{}, test matrix is {}x{}",
            state.n_users(),
            state.n_items(),
            test.n_users(),
            test.n_items()
        )));
    }
    let mut known = vec![train];
    known.extend(valid);
    let task = RankingTask::from_matrices(test, &known);
    let activity: Vec<usize> = train.items_by_user(Label::Liked).iter().map(Vec::len).collect();
    evaluate_with(
        |u| state.predict(u).expect("user index within state"),
        &task,
        &activity,
        cutoffs,
        groups,
        fold,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

/// Two-sided two-sample t-test with pooled variance, at the 0.05 level.
///
/// When both samples have zero variance the statistic is 0 for equal means
/// and infinite otherwise, with p = 1 and p = 0 respectively.
pub fn significance(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::InsufficientFolds(a.len(), b.len()));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |x: &[f64], m: f64| x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (ss(a, ma) + ss(b, mb)) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let diff = ma - mb;

    // means of constant samples can differ from the constant by rounding
    let (t, p) = if se <= 1e-12 * (ma.abs() + mb.abs()) {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = diff / se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        t,
        p,
        significant: p < 0.05,
    })
}
