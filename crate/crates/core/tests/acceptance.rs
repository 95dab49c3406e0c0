//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every criterion runs even if an earlier one fails; the test fails at the
//! end if any did.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use rme::cooccur::{build_x, build_y, build_z, SppmiMatrix};
use rme::eval::{map_at, ndcg_at, recall_at, RankingTask};
use rme::ingest::{kcore_filter, split, Cell, InteractionMatrix, Label, LabeledEvent, SplitMode, SplitSpec};
use rme::model::{
    objective, train, update_bias_block, update_context_block, update_item_factors, update_user_factors, BiasBlock,
    ContextBlock, Cooccurrence, Hyperparams, ModelState, Preferences, Toggles, Variant,
};
use rme::negsample::{draw_negatives, em_train, sampling_prior, NegSampleConfig};
use rme::persist::{load, save, ModelFile};
use rme::synthetic::{planted, PlantedConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut StdRng, m: usize, n: usize, density: f64, with_dislikes: bool) -> InteractionMatrix {
    let mut cells = Vec::new();
    for u in 0..m {
        for p in 0..n {
            if rng.random::<f64>() < density {
                let label = if with_dislikes && rng.random::<f64>() < 0.4 {
                    Label::Disliked
                } else {
                    Label::Liked
                };
                cells.push(Cell {
                    user: u as u32,
                    item: p as u32,
                    label,
                    timestamp: None,
                });
            }
        }
    }
    InteractionMatrix::from_cells(m, n, cells).unwrap()
}

// ---------------------------------------------------------------- 1: SPPMI

/// Dense SPPMI straight from the definition: every ordered pair of distinct
/// members of a list is one co-occurrence.
fn sppmi_oracle(dim: usize, lists: &[BTreeSet<usize>], s: f64) -> Vec<Vec<f64>> {
    let mut count = vec![vec![0.0f64; dim]; dim];
    for l in lists {
        for &i in l {
            for &j in l {
                if i != j {
                    count[i][j] += 1.0;
                }
            }
        }
    }
    let total: f64 = count.iter().flatten().sum();
    let marg: Vec<f64> = count.iter().map(|r| r.iter().sum()).collect();
    let mut out = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            if count[i][j] > 0.0 {
                let pmi = (count[i][j] * total / (marg[i] * marg[j])).ln();
                out[i][j] = (pmi - s.ln()).max(0.0);
            }
        }
    }
    out
}

fn compare_dense(name: &str, got: &SppmiMatrix, want: &[Vec<f64>]) -> Result<(), String> {
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let g = got.get(i as u32, j as u32);
            check((g - w).abs() <= 1e-12, || format!("{name}[{i},{j}] = {g}, oracle {w}"))?;
        }
    }
    Ok(())
}

fn criterion_sppmi() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let start = Instant::now();
    for inst in 0..200 {
        let m = rng.random_range(1..=20);
        let n = rng.random_range(1..=15);
        let s = [1.0, 2.0, 5.0][inst % 3];
        let mat = random_matrix(&mut rng, m, n, 0.35, true);
        let by = |label: Label, by_user: bool| -> Vec<BTreeSet<usize>> {
            let mut lists = vec![BTreeSet::new(); if by_user { m } else { n }];
            for c in mat.cells().iter().filter(|c| c.label == label) {
                if by_user {
                    lists[c.user as usize].insert(c.item as usize);
                } else {
                    lists[c.item as usize].insert(c.user as usize);
                }
            }
            lists
        };
        compare_dense("X", &build_x(&mat, s), &sppmi_oracle(n, &by(Label::Liked, true), s))?;
        compare_dense("Y", &build_y(&mat, s), &sppmi_oracle(n, &by(Label::Disliked, true), s))?;
        compare_dense("Z", &build_z(&mat, s), &sppmi_oracle(m, &by(Label::Liked, false), s))?;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("200 instances, {t:.2?}"))
}

// ------------------------------------------------- 2, 3: stationarity, descent

struct Instance {
    prefs: Preferences,
    x: SppmiMatrix,
    y: SppmiMatrix,
    z: SppmiMatrix,
    hp: Hyperparams,
}

impl Instance {
    fn ctx(&self) -> Cooccurrence<'_> {
        Cooccurrence::new(&self.x, &self.y, &self.z)
    }
}

fn small_instances() -> Vec<Instance> {
    let mut rng = StdRng::seed_from_u64(2);
    (0..50)
        .map(|i| {
            let m = rng.random_range(2..=10);
            let n = rng.random_range(2..=10);
            let mat = random_matrix(&mut rng, m, n, 0.5, true);
            let lambda = if i % 2 == 0 { 0.01 } else { 1.0 };
            let hp = Hyperparams {
                k: rng.random_range(1..=3),
                lambda_factor: lambda,
                lambda_context: lambda,
                seed: i as u64,
                ..Hyperparams::default()
            };
            Instance {
                prefs: Preferences::from_matrix(&mat),
                x: build_x(&mat, 1.0),
                y: build_y(&mat, 1.0),
                z: build_z(&mat, 1.0),
                hp,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum Block {
    Users,
    Items,
    Context(ContextBlock),
    Bias(BiasBlock),
}

fn block_values(state: &mut ModelState, block: Block) -> &mut [f64] {
    match block {
        Block::Users => state.users.as_mut_slice(),
        Block::Items => state.items.as_mut_slice(),
        Block::Context(ContextBlock::LikedItems) => state.liked_contexts.as_mut_slice(),
        Block::Context(ContextBlock::DislikedItems) => state.disliked_contexts.as_mut_slice(),
        Block::Context(ContextBlock::Users) => state.user_contexts.as_mut_slice(),
        Block::Bias(BiasBlock::LikedItem) => &mut state.liked_item_bias,
        Block::Bias(BiasBlock::LikedContext) => &mut state.liked_context_bias,
        Block::Bias(BiasBlock::DislikedItem) => &mut state.disliked_item_bias,
        Block::Bias(BiasBlock::DislikedContext) => &mut state.disliked_context_bias,
        Block::Bias(BiasBlock::User) => &mut state.user_bias,
        Block::Bias(BiasBlock::UserContext) => &mut state.user_context_bias,
    }
}

const BLOCKS: [Block; 11] = [
    Block::Users,
    Block::Items,
    Block::Context(ContextBlock::LikedItems),
    Block::Context(ContextBlock::DislikedItems),
    Block::Context(ContextBlock::Users),
    Block::Bias(BiasBlock::LikedItem),
    Block::Bias(BiasBlock::LikedContext),
    Block::Bias(BiasBlock::DislikedItem),
    Block::Bias(BiasBlock::DislikedContext),
    Block::Bias(BiasBlock::User),
    Block::Bias(BiasBlock::UserContext),
];

fn run_block(state: &mut ModelState, inst: &Instance, block: Block) {
    let ctx = inst.ctx();
    match block {
        Block::Users => update_user_factors(state, &inst.prefs, &ctx, &inst.hp).unwrap(),
        Block::Items => update_item_factors(state, &inst.prefs, &ctx, &inst.hp).unwrap(),
        Block::Context(b) => update_context_block(state, &inst.prefs, &ctx, &inst.hp, b).unwrap(),
        Block::Bias(b) => update_bias_block(state, &ctx, b),
    }
}

/// Max-norm of the central-difference gradient of the objective with
/// respect to one block.
fn numeric_gradient(state: &ModelState, inst: &Instance, block: Block, h: f64) -> f64 {
    let ctx = inst.ctx();
    let mut probe = state.clone();
    let len = block_values(&mut probe, block).len();
    let mut worst = 0.0f64;
    for i in 0..len {
        let orig = block_values(&mut probe, block)[i];
        block_values(&mut probe, block)[i] = orig + h;
        let up = objective(&probe, &inst.prefs, &ctx, &inst.hp).unwrap();
        block_values(&mut probe, block)[i] = orig - h;
        let down = objective(&probe, &inst.prefs, &ctx, &inst.hp).unwrap();
        block_values(&mut probe, block)[i] = orig;
        worst = worst.max(((up - down) / (2.0 * h)).abs());
    }
    worst
}

fn criterion_stationarity(instances: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut checks = 0;
    for (idx, inst) in instances.iter().enumerate() {
        let mut state = ModelState::init(inst.prefs.n_users(), inst.prefs.n_items(), inst.hp.k, Toggles::ALL, inst.hp.seed);
        for round in 0..2 {
            for block in BLOCKS {
                run_block(&mut state, inst, block);
                let loss = objective(&state, &inst.prefs, &inst.ctx(), &inst.hp).unwrap();
                let g = numeric_gradient(&state, inst, block, 1e-5);
                let tol = 1e-6 * (1.0 + loss.abs());
                check(g <= tol, || {
                    format!("instance {idx} round {round} block {block:?}: |grad| {g:.3e} > {tol:.3e}")
                })?;
                checks += 1;
            }
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!("{checks} block checks, {t:.2?}"))
}

fn criterion_descent(instances: &[Instance]) -> Outcome {
    let mut sweeps = 0;
    for (idx, inst) in instances.iter().enumerate() {
        let ctx = inst.ctx();
        let mut state = ModelState::init(inst.prefs.n_users(), inst.prefs.n_items(), inst.hp.k, Toggles::ALL, inst.hp.seed);
        let mut prev = objective(&state, &inst.prefs, &ctx, &inst.hp).unwrap();
        for t in 1..=20 {
            rme::model::sweep(&mut state, &inst.prefs, &ctx, &inst.hp).unwrap();
            let cur = objective(&state, &inst.prefs, &ctx, &inst.hp).unwrap();
            check(cur <= prev + 1e-9 * prev.abs(), || {
                format!("instance {idx} sweep {t}: objective rose {prev} -> {cur}")
            })?;
            prev = cur;
            sweeps += 1;
        }
    }
    Ok(format!("{sweeps} sweeps non-increasing"))
}

// ------------------------------------------------------------ 4: WMF reduction

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for cc in c..k {
                a[r][cc] -= f * a[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weighted ridge regression summing over every cell of the matrix.
fn naive_wmf_sweep(alpha: &mut [Vec<f64>], beta: &mut [Vec<f64>], liked: &[Vec<bool>], hp: &Hyperparams) {
    let k = hp.k;
    let solve_side = |target: &mut [Vec<f64>], fixed: &[Vec<f64>], pref: &dyn Fn(usize, usize) -> bool| {
        for (a, row) in target.iter_mut().enumerate() {
            let mut lhs = vec![vec![0.0; k]; k];
            let mut rhs = vec![0.0; k];
            for (b, f) in fixed.iter().enumerate() {
                let m = pref(a, b);
                let w = hp.scale * (1.0 + hp.confidence * if m { 1.0 } else { 0.0 });
                for i in 0..k {
                    for j in 0..k {
                        lhs[i][j] += w * f[i] * f[j];
                    }
                    if m {
                        rhs[i] += w * f[i];
                    }
                }
            }
            for (i, r) in lhs.iter_mut().enumerate() {
                r[i] += hp.lambda_factor;
            }
            *row = gauss_solve(lhs, rhs);
        }
    };
    solve_side(alpha, beta, &|u, p| liked[u][p]);
    solve_side(beta, alpha, &|p, u| liked[u][p]);
}

fn criterion_wmf_reduction() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for inst in 0..10u64 {
        let mat = random_matrix(&mut rng, 5, 4, 0.5, false);
        let prefs = Preferences::from_matrix(&mat);
        let hp = Hyperparams {
            k: 2,
            lambda_factor: 0.5,
            max_sweeps: 10,
            seed: inst,
            ..Hyperparams::default()
        }
        .with_variant(Variant::Wmf);
        let (ex, eu) = (SppmiMatrix::empty(4), SppmiMatrix::empty(5));
        let out = train(&prefs, &Cooccurrence::new(&ex, &ex, &eu), &hp, None).map_err(|e| e.to_string())?;

        let init = ModelState::init(5, 4, 2, Toggles::NONE, inst);
        let mut alpha: Vec<Vec<f64>> = (0..5).map(|u| init.users.row(u).to_vec()).collect();
        let mut beta: Vec<Vec<f64>> = (0..4).map(|p| init.items.row(p).to_vec()).collect();
        let liked: Vec<Vec<bool>> = (0..5).map(|u| (0..4).map(|p| prefs.is_liked(u, p)).collect()).collect();
        for _ in 0..10 {
            naive_wmf_sweep(&mut alpha, &mut beta, &liked, &hp);
        }
        for u in 0..5 {
            for (a, b) in out.state.users.row(u).iter().zip(&alpha[u]) {
                worst = worst.max((a - b).abs());
            }
        }
        for p in 0..4 {
            for (a, b) in out.state.items.row(p).iter().zip(&beta[p]) {
                worst = worst.max((a - b).abs());
            }
        }
        check(out.state.liked_contexts.is_zero() && out.state.user_bias.iter().all(|&b| b == 0.0), || {
            "disabled blocks were touched".into()
        })?;
    }
    check(worst <= 1e-8, || format!("max factor difference {worst:.3e}"))?;
    Ok(format!("10 instances, max difference {worst:.1e}"))
}

// ------------------------------------------------------------- 5: metrics

fn oracle_metrics(ranked: &[u32], relevant: &HashSet<u32>, n: usize) -> (f64, f64, f64) {
    let denom = n.min(relevant.len());
    let top = &ranked[..n.min(ranked.len())];
    let mut found = 0usize;
    let mut dcg = 0.0;
    let mut ap = 0.0;
    for (i, p) in top.iter().enumerate() {
        if relevant.contains(p) {
            found += 1;
            dcg += 1.0 / ((i + 2) as f64).log2();
            ap += found as f64 / (i + 1) as f64;
        }
    }
    let mut idcg = 0.0;
    for i in 0..denom {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    (found as f64 / denom as f64, dcg / idcg, ap / denom as f64)
}

fn criterion_metrics() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    for case in 0..1000 {
        let len = rng.random_range(1..=12);
        let mut ranked: Vec<u32> = (0..len).collect();
        ranked.shuffle(&mut rng);
        let mut relevant: HashSet<u32> = (0..len).filter(|_| rng.random::<f64>() < 0.4).collect();
        if relevant.is_empty() {
            relevant.insert(rng.random_range(0..len));
        }
        let n = rng.random_range(1..=len as usize);
        let (r, d, a) = oracle_metrics(&ranked, &relevant, n);
        let got = (
            recall_at(&ranked, &relevant, n).unwrap(),
            ndcg_at(&ranked, &relevant, n).unwrap(),
            map_at(&ranked, &relevant, n).unwrap(),
        );
        check(got == (r, d, a), || format!("case {case}: got {got:?}, oracle {:?}", (r, d, a)))?;
    }

    let set = |v: &[char]| v.iter().copied().collect::<HashSet<char>>();
    let fixtures: [(&str, f64, f64); 6] = [
        ("recall A,B | A @2", recall_at(&['A', 'B'], &set(&['A']), 2).unwrap(), 1.0),
        ("recall B,A,D | A,C @2", recall_at(&['B', 'A', 'D'], &set(&['A', 'C']), 2).unwrap(), 0.5),
        ("ndcg A,B | A @2", ndcg_at(&['A', 'B'], &set(&['A']), 2).unwrap(), 1.0),
        ("ndcg B,A | A @2", ndcg_at(&['B', 'A'], &set(&['A']), 2).unwrap(), 1.0 / 3f64.log2()),
        (
            "ndcg A,B,C | A,C @3",
            ndcg_at(&['A', 'B', 'C'], &set(&['A', 'C']), 3).unwrap(),
            (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2()),
        ),
        ("map B,A,C | A,C @3", map_at(&['B', 'A', 'C'], &set(&['A', 'C']), 3).unwrap(), (0.5 + 2.0 / 3.0) / 2.0),
    ];
    for (name, got, want) in fixtures {
        check(got.to_bits() == want.to_bits(), || format!("fixture {name}: {got} != {want}"))?;
    }
    Ok("1000 random rankings + 6 fixtures exact".into())
}

// ------------------------------------------------------------- 6: sampler

fn criterion_sampler() -> Outcome {
    let scores = [0.5, -1.0, 2.0, 0.0, 1.5, -0.3];
    let observed = [2u32, 4];
    let prior = sampling_prior(&scores, &observed).map_err(|e| e.to_string())?;
    let sum: f64 = prior.iter().sum();
    check((sum - 1.0).abs() <= 1e-12, || format!("prior sums to {sum}"))?;

    // one user whose liked list is `observed`; a state with β·α_u = scores
    let n = scores.len();
    let mut state = ModelState::zeros(1, n, 1, Toggles::NONE);
    state.users.row_mut(0)[0] = 1.0;
    for (p, s) in scores.iter().enumerate() {
        state.items.row_mut(p)[0] = *s;
    }
    let liked: Vec<u32> = observed.to_vec();
    let total = 100_000usize;
    // each round draws ⌊τ·|liked|⌋ = 2 items; rounds reseed independently
    let cfg = NegSampleConfig {
        ratio: 1.0,
        seed: 6,
        ..NegSampleConfig::default()
    };
    let mut freq = vec![0usize; n];
    let mut drawn = 0;
    let mut round = 0u64;
    let prefs = Preferences::from_lists(n, &[liked]);
    while drawn < total {
        let set = draw_negatives(&state, &prefs, &cfg, round).map_err(|e| e.to_string())?;
        for &p in set.draws(0) {
            if drawn < total {
                freq[p as usize] += 1;
                drawn += 1;
            }
        }
        round += 1;
    }
    for p in 0..n {
        let expect = total as f64 * prior[p];
        let sigma = (total as f64 * prior[p] * (1.0 - prior[p])).sqrt();
        if observed.contains(&(p as u32)) {
            check(freq[p] == 0, || format!("observed item {p} drawn {} times", freq[p]))?;
        } else {
            check((freq[p] as f64 - expect).abs() <= 3.0 * sigma, || {
                format!("item {p}: {} draws, expected {expect:.1} ± {:.1}", freq[p], 3.0 * sigma)
            })?;
        }
    }
    Ok(format!("{total} draws within 3σ, |Σp - 1| = {:.1e}", (sum - 1.0).abs()))
}

// ------------------------------------------------------ 7: planted structure

pub fn planted_config(seed: u64) -> PlantedConfig {
    PlantedConfig {
        n_users: 200,
        n_items: 100,
        blocks: 2,
        noise: 0.05,
        seed,
        ..PlantedConfig::default()
    }
}

fn planted_hyperparams(seed: u64) -> Hyperparams {
    Hyperparams {
        k: 10,
        seed,
        ..Hyperparams::default()
    }
}

fn criterion_planted() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let data = planted(&planted_config(seed));
        let s = split(&data, &SplitSpec { seed, ..SplitSpec::default() }).map_err(|e| e.to_string())?;
        let prefs = Preferences::from_matrix(&s.train);
        let (x, y, z) = (build_x(&s.train, 1.0), build_y(&s.train, 1.0), build_z(&s.train, 1.0));
        let ctx = Cooccurrence::new(&x, &y, &z);
        let valid = RankingTask::from_matrices(&s.valid, &[&s.train]);
        let test = RankingTask::from_matrices(&s.test, &[&s.train, &s.valid]);
        let score = |v: Variant| -> Result<f64, String> {
            let hp = planted_hyperparams(seed).with_variant(v);
            let out = train(&prefs, &ctx, &hp, Some(&valid)).map_err(|e| e.to_string())?;
            Ok(test.mean_ndcg(&out.state, 5))
        };
        let (wmf, rme) = (score(Variant::Wmf)?, score(Variant::Rme)?);
        if rme >= wmf {
            wins += 1;
        }
        detail.push(format!("{rme:.3}/{wmf:.3}"));
    }
    let t = start.elapsed();
    let summary = format!("RME/WMF NDCG@5 per seed [{}], {t:.1?}", detail.join(" "));
    check(wins >= 4, || format!("RME ≥ WMF on {wins}/5 seeds; {summary}"))?;
    check(t < Duration::from_secs(300), || format!("took {t:?}"))?;
    Ok(format!("{wins}/5 wins; {summary}"))
}

// --------------------------------------------------------------- 8: EM loop

fn criterion_em() -> Outcome {
    let data = planted(&PlantedConfig {
        dislikes_per_user: 0,
        ..planted_config(8)
    });
    let s = split(&data, &SplitSpec { seed: 8, ..SplitSpec::default() }).map_err(|e| e.to_string())?;
    let valid = RankingTask::from_matrices(&s.valid, &[&s.train]);
    let hp = Hyperparams {
        k: 8,
        max_sweeps: 10,
        seed: 8,
        ..Hyperparams::default()
    };
    let cfg = NegSampleConfig {
        ratio: 0.5,
        max_iter: 6,
        seed: 8,
        ..NegSampleConfig::default()
    };
    let a = em_train(&s.train, &hp, &cfg, &valid).map_err(|e| e.to_string())?;
    let b = em_train(&s.train, &hp, &cfg, &valid).map_err(|e| e.to_string())?;
    check(a.history.len() <= cfg.max_iter, || format!("{} iterations > max_iter", a.history.len()))?;
    let accepted = a.accepted_ndcg();
    check(accepted.windows(2).all(|w| w[1] > w[0]), || format!("accepted NDCG not increasing: {accepted:?}"))?;
    check(a.history == b.history && a.state == b.state && a.samples == b.samples, || {
        "two runs with one seed differ".into()
    })?;
    Ok(format!(
        "{} iterations, {} accepted, NDCG {:.4} -> {:.4}",
        a.history.len(),
        accepted.len(),
        a.initial_ndcg,
        accepted.last().copied().unwrap_or(a.initial_ndcg)
    ))
}

// ------------------------------------------------------------ 9: scaling

/// `n_users` users, each liking `per_user` items at random from `n_items`,
/// with as many dislikes.
fn scaling_data(rng: &mut StdRng, n_users: usize, n_items: usize, per_user: usize) -> InteractionMatrix {
    let mut cells = Vec::new();
    let all: Vec<u32> = (0..n_items as u32).collect();
    for u in 0..n_users as u32 {
        let picks: Vec<u32> = all.choose_multiple(rng, 2 * per_user).copied().collect();
        for (r, &p) in picks.iter().enumerate() {
            cells.push(Cell {
                user: u,
                item: p,
                label: if r < per_user { Label::Liked } else { Label::Disliked },
                timestamp: None,
            });
        }
    }
    InteractionMatrix::from_cells(n_users, n_items, cells).unwrap()
}

/// Two disjoint copies of `m`: users and items of the copy are offset.
fn doubled(m: &InteractionMatrix) -> InteractionMatrix {
    let (nu, ni) = (m.n_users() as u32, m.n_items() as u32);
    let mut cells = m.cells().to_vec();
    cells.extend(m.cells().iter().map(|c| Cell {
        user: c.user + nu,
        item: c.item + ni,
        ..*c
    }));
    InteractionMatrix::from_cells(2 * m.n_users(), 2 * m.n_items(), cells).unwrap()
}

fn sweep_time(mat: &InteractionMatrix, hp: &Hyperparams) -> (Duration, usize) {
    let prefs = Preferences::from_matrix(mat);
    let (x, y, z) = (build_x(mat, hp.shift), build_y(mat, hp.shift), build_z(mat, hp.shift));
    let ctx = Cooccurrence::new(&x, &y, &z);
    let total = prefs.nnz() + mat.cells().iter().filter(|c| c.label == Label::Disliked).count() + ctx.nnz();
    let mut best = Duration::MAX;
    for rep in 0..5 {
        let mut state = ModelState::init(mat.n_users(), mat.n_items(), hp.k, hp.toggles, rep);
        let t = Instant::now();
        rme::model::sweep(&mut state, &prefs, &ctx, hp).unwrap();
        best = best.min(t.elapsed());
    }
    (best, total)
}

fn criterion_scaling() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let mut rng = StdRng::seed_from_u64(9);
        let small = scaling_data(&mut rng, 1500, 1500, 6);
        let large = doubled(&small);
        // Two copies double every pair count and |D|, so PMI rises by ln 2;
        // doubling s cancels it and each SPPMI matrix is two exact copies.
        let hp1 = Hyperparams { k: 4, ..Hyperparams::default() };
        let hp2 = Hyperparams { shift: 2.0, ..hp1.clone() };
        let (t1, nnz1) = sweep_time(&small, &hp1);
        let (t2, nnz2) = sweep_time(&large, &hp2);
        let size = nnz2 as f64 / nnz1 as f64;
        let ratio = t2.as_secs_f64() / t1.as_secs_f64();
        let detail = format!("nnz {nnz1} -> {nnz2} (x{size:.2}), sweep {t1:.2?} -> {t2:.2?} (x{ratio:.2})");
        check((1.95..=2.05).contains(&size), || format!("workload not doubled: {detail}"))?;
        check((1.5..=3.0).contains(&ratio), || format!("time ratio outside [1.5, 3.0]: {detail}"))?;
        Ok(detail)
    })
}

// ---------------------------------------------------------- 10: persistence

fn criterion_persistence() -> Outcome {
    let data = planted(&planted_config(10));
    let prefs = Preferences::from_matrix(&data);
    let (x, y, z) = (build_x(&data, 1.0), build_y(&data, 1.0), build_z(&data, 1.0));
    let hp = Hyperparams {
        k: 6,
        max_sweeps: 3,
        seed: 10,
        ..Hyperparams::default()
    };
    let out = train(&prefs, &Cooccurrence::new(&x, &y, &z), &hp, None).map_err(|e| e.to_string())?;
    let file = ModelFile {
        state: out.state,
        hyperparams: hp,
        user_ids: data.user_ids().to_vec(),
        item_ids: data.item_ids().to_vec(),
    };
    let mut first = Vec::new();
    save(&mut first, &file).map_err(|e| e.to_string())?;
    let loaded = load(first.as_slice()).map_err(|e| e.to_string())?;
    let mut second = Vec::new();
    save(&mut second, &loaded).map_err(|e| e.to_string())?;
    check(first == second, || "re-saved file differs".into())?;
    for u in 0..data.n_users() {
        let (a, b) = (
            rme::model::predict_scores(&file.state, u).unwrap(),
            rme::model::predict_scores(&loaded.state, u).unwrap(),
        );
        check(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), || format!("user {u} predictions differ"))?;
    }
    Ok(format!("{} bytes byte-identical, predictions identical", first.len()))
}

// ------------------------------------------------------- 11: k-core, splits

fn labeled(pairs: &[(&str, &str)]) -> Vec<LabeledEvent> {
    pairs
        .iter()
        .map(|(u, p)| LabeledEvent {
            user: u.to_string(),
            item: p.to_string(),
            label: Label::Liked,
            timestamp: None,
        })
        .collect()
}

/// Repeatedly deletes every user and item under its threshold until nothing
/// changes.
fn kcore_oracle(pairs: &[(&str, &str)], user_min: usize, item_min: usize) -> BTreeSet<(String, String)> {
    let mut live: BTreeSet<(String, String)> = pairs.iter().map(|(u, p)| (u.to_string(), p.to_string())).collect();
    loop {
        let mut users: BTreeMap<&str, usize> = BTreeMap::new();
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        for (u, p) in &live {
            *users.entry(u).or_default() += 1;
            *items.entry(p).or_default() += 1;
        }
        let next: BTreeSet<(String, String)> = live
            .iter()
            .filter(|(u, p)| users[u.as_str()] >= user_min && items[p.as_str()] >= item_min)
            .cloned()
            .collect();
        if next == live {
            return live;
        }
        live = next;
    }
}

fn kcore_pairs(m: &InteractionMatrix) -> BTreeSet<(String, String)> {
    m.cells()
        .iter()
        .map(|c| (m.user_ids()[c.user as usize].clone(), m.item_ids()[c.item as usize].clone()))
        .collect()
}

fn random_split_oracle(n: usize, seed: u64) -> Vec<usize> {
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..(i + 1) as u32) as usize;
        order.swap(i, j);
    }
    order
}

fn criterion_kcore_split() -> Outcome {
    // c has one interaction; with item cores of 2 its removal cascades
    let grid = [("a", "x"), ("a", "y"), ("b", "y"), ("b", "z"), ("c", "z")];
    for (um, im) in [(2, 1), (1, 2), (2, 2)] {
        let want = kcore_oracle(&grid, um, im);
        match kcore_filter(&labeled(&grid), um, im) {
            Ok(m) => check(kcore_pairs(&m) == want, || format!("cores ({um},{im}): {:?} vs {want:?}", kcore_pairs(&m)))?,
            Err(_) => check(want.is_empty(), || format!("cores ({um},{im}): filtered everything, oracle {want:?}"))?,
        }
    }
    let m = kcore_filter(&labeled(&grid), 2, 1).unwrap();
    check(m.n_users() == 2 && m.n_items() == 3, || "(2,1) should drop only c".into())?;

    // split determinism and the random-mode partition against a reference shuffle
    let cells: Vec<Cell> = (0..10)
        .map(|i| Cell {
            user: (i % 5) as u32,
            item: (i / 5) as u32,
            label: Label::Liked,
            timestamp: Some(i as u64),
        })
        .collect();
    let mat = InteractionMatrix::from_cells(5, 2, cells).unwrap();
    let spec = SplitSpec {
        seed: 7,
        mode: SplitMode::Random,
        ..SplitSpec::default()
    };
    let a = split(&mat, &spec).unwrap();
    let b = split(&mat, &spec).unwrap();
    check(a.train == b.train && a.valid == b.valid && a.test == b.test, || "split not deterministic".into())?;
    let order = random_split_oracle(10, 7);
    let sorted = mat.cells();
    let pick = |r: std::ops::Range<usize>| -> BTreeSet<(u32, u32)> {
        order[r].iter().map(|&i| (sorted[i].user, sorted[i].item)).collect()
    };
    let as_set = |m: &InteractionMatrix| -> BTreeSet<(u32, u32)> { m.cells().iter().map(|c| (c.user, c.item)).collect() };
    let (train_want, valid_want, test_want) = (pick(0..7), pick(7..8), pick(8..10));
    check(as_set(&a.train) == train_want, || "train differs from reference shuffle".into())?;
    let valid_got: BTreeSet<_> = as_set(&a.valid);
    let test_got: BTreeSet<_> = as_set(&a.test);
    check(valid_got.is_subset(&valid_want) && valid_got.len() + a.dropped_valid == 1, || {
        "valid differs from reference shuffle".into()
    })?;
    check(test_got.is_subset(&test_want) && test_got.len() + a.dropped_test == 2, || {
        "test differs from reference shuffle".into()
    })?;
    let other = split(&mat, &SplitSpec { seed: 8, ..spec }).unwrap();
    check(other.train != a.train, || "seed has no effect".into())?;
    Ok("3 core settings match oracle; splits deterministic and match reference shuffle".into())
}

#[test]
fn acceptance() {
    let instances = small_instances();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 sppmi-oracle", Box::new(criterion_sppmi)),
        ("2 als-stationarity", Box::new(|| criterion_stationarity(&instances))),
        ("3 monotone-descent", Box::new(|| criterion_descent(&instances))),
        ("4 wmf-reduction", Box::new(criterion_wmf_reduction)),
        ("5 metric-oracles", Box::new(criterion_metrics)),
        ("6 sampler-statistics", Box::new(criterion_sampler)),
        ("7 planted-structure", Box::new(criterion_planted)),
        ("8 em-loop", Box::new(criterion_em)),
        ("9 complexity-scaling", Box::new(criterion_scaling)),
        ("10 persistence", Box::new(criterion_persistence)),
        ("11 kcore-and-splits", Box::new(criterion_kcore_split)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
