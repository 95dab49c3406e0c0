use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;

use rme::cooccur::{build_x, build_y, build_z, SppmiMatrix};
use rme::eval::{evaluate, EvalReport, RankingTask};
use rme::ingest::{binarize, derive_seed, kcore_filter, parse_events, split, InteractionMatrix};
use rme::model::{self, Cooccurrence, Hyperparams, ModelState, Preferences};
use rme::negsample::{draw_negatives, em_train, NegSampleConfig};
use rme::persist::{self, ModelFile};

use crate::artifacts::{self, FoldData, Kind, Layout};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Context};

/// Loads, binarizes and k-core filters the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<InteractionMatrix> {
    let path = &cfg.data.path;
    let events = parse_events(path, cfg.format()?).context(path.display())?;
    let labeled = binarize(&events, cfg.binarize_policy());
    let matrix = kcore_filter(&labeled.cells, cfg.data.user_core, cfg.data.item_core).context(path.display())?;
    info!(
        "{}: {} events, {} dropped by binarization, {} users x {} items after cores",
        path.display(),
        events.len(),
        labeled.dropped,
        matrix.n_users(),
        matrix.n_items()
    );
    Ok(matrix)
}

/// Splits the data for every fold and writes the SPPMI matrices the
/// configured variant needs. With implicit feedback Y is left to training,
/// since it comes from sampled negatives.
pub fn prep(cfg: &ExperimentConfig) -> CliResult<()> {
    let matrix = load_dataset(cfg)?;
    let layout = Layout::new(cfg);
    layout.prepare(Kind::Splits, cfg)?;
    layout.prepare(Kind::Sppmi, cfg)?;
    let spec = cfg.split_spec()?;
    let hp = cfg.hyperparams();
    for fold in 0..spec.fold_count {
        let s = split(&matrix, &spec.for_fold(fold))?;
        artifacts::write_split(&layout, fold, &s)?;
        let mut built = Vec::new();
        if hp.toggles.liked_items {
            artifacts::write_sppmi(&layout.sppmi_path(fold, "X"), &build_x(&s.train, hp.shift))?;
            built.push("X");
        }
        if hp.toggles.disliked_items && !cfg.implicit() {
            artifacts::write_sppmi(&layout.sppmi_path(fold, "Y"), &build_y(&s.train, hp.shift))?;
            built.push("Y");
        }
        if hp.toggles.users {
            artifacts::write_sppmi(&layout.sppmi_path(fold, "Z"), &build_z(&s.train, hp.shift))?;
            built.push("Z");
        }
        println!(
            "fold {fold}: train {} valid {} test {} (dropped {} + {}), sppmi [{}]",
            s.train.nnz(),
            s.valid.nnz(),
            s.test.nnz(),
            s.dropped_valid,
            s.dropped_test,
            built.join(" ")
        );
    }
    Ok(())
}

struct Contexts {
    x: SppmiMatrix,
    y: SppmiMatrix,
    z: SppmiMatrix,
}

fn load_contexts(layout: &Layout, fold: usize, hp: &Hyperparams, train: &InteractionMatrix) -> CliResult<Contexts> {
    let (n, m) = (train.n_items(), train.n_users());
    let read = |on: bool, name: &str, dim: usize| -> CliResult<SppmiMatrix> {
        if !on {
            return Ok(SppmiMatrix::empty(dim));
        }
        let mat = artifacts::read_sppmi(&layout.sppmi_path(fold, name))?;
        if mat.dim() != dim {
            return Err(CliError::artifact(format!(
                "{name} has dimension {}, split has {dim}",
                mat.dim()
            )));
        }
        Ok(mat)
    };
    Ok(Contexts {
        x: read(hp.toggles.liked_items, "X", n)?,
        y: read(hp.toggles.disliked_items, "Y", n)?,
        z: read(hp.toggles.users, "Z", m)?,
    })
}

fn validation_task(data: &FoldData) -> Option<RankingTask> {
    let task = RankingTask::from_matrices(&data.valid, &[&data.train]);
    if task.users().is_empty() {
        warn!("validation split has no liked cells; training without early stopping");
        None
    } else {
        Some(task)
    }
}

/// Outcome of training one fold.
pub struct Trained {
    pub state: ModelState,
    pub valid_ndcg: Option<f64>,
    /// CSV lines including the header.
    pub history: Vec<String>,
}

fn train_fold(
    layout: &Layout,
    fold: usize,
    data: &FoldData,
    implicit: bool,
    hp: &Hyperparams,
    ncfg: &NegSampleConfig,
) -> CliResult<Trained> {
    let valid = validation_task(data);
    if implicit {
        let valid = valid.ok_or_else(|| CliError::new("negsample", "implicit training needs a validation split"))?;
        let out = em_train(&data.train, hp, ncfg, &valid)?;
        let mut history = vec!["iteration,draws,sweeps,valid_ndcg100,accepted".to_string()];
        history.push(format!("0,0,,{},true", out.initial_ndcg));
        history.extend(
            out.history
                .iter()
                .map(|h| format!("{},{},{},{},{}", h.iteration, h.draws, h.sweeps, h.ndcg, h.accepted)),
        );
        let best = out.accepted_ndcg().last().copied().unwrap_or(out.initial_ndcg);
        Ok(Trained {
            state: out.state,
            valid_ndcg: Some(best),
            history,
        })
    } else {
        let ctx = load_contexts(layout, fold, hp, &data.train)?;
        let prefs = Preferences::from_matrix(&data.train);
        let out = model::train(&prefs, &Cooccurrence::new(&ctx.x, &ctx.y, &ctx.z), hp, valid.as_ref())?;
        let mut history = vec!["sweep,objective,valid_ndcg100".to_string()];
        history.extend(out.history.iter().map(|r| {
            format!(
                "{},{},{}",
                r.sweep,
                r.objective,
                r.valid_ndcg.map_or(String::new(), |v| v.to_string())
            )
        }));
        Ok(Trained {
            state: out.state,
            valid_ndcg: out.best_ndcg,
            history,
        })
    }
}

/// Trains every fold: the joint model for explicit feedback, the
/// negative-sampling loop for implicit feedback.
pub fn train(cfg: &ExperimentConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let folds = artifacts::fold_count(&layout)?;
    layout.prepare(Kind::Models, cfg)?;
    let hp = cfg.hyperparams();
    for fold in 0..folds {
        let data = artifacts::read_split(&layout, fold)?;
        let out = train_fold(&layout, fold, &data, cfg.implicit(), &hp, &cfg.negsample_config())?;
        let hist = layout.history_path(fold);
        let mut w = artifacts::writer(&hist)?;
        for line in &out.history {
            writeln!(w, "{line}").context(hist.display())?;
        }
        w.flush().context(hist.display())?;
        let file = ModelFile {
            state: out.state,
            hyperparams: hp.clone(),
            user_ids: data.train.user_ids().to_vec(),
            item_ids: data.train.item_ids().to_vec(),
        };
        let path = layout.model_path(fold);
        persist::save_path(&path, &file).context(path.display())?;
        println!(
            "fold {fold}: {} rows of history, valid NDCG@100 {}, model {}",
            out.history.len() - 1,
            out.valid_ndcg.map_or("n/a".to_string(), |v| format!("{v:.5}")),
            path.display()
        );
    }
    Ok(())
}

fn load_model(path: &std::path::Path, data: &FoldData) -> CliResult<ModelFile> {
    if !path.exists() {
        return Err(CliError::artifact(format!("{}: model file not found (run train first)", path.display())));
    }
    let file = persist::load_path(path).context(path.display())?;
    if file.state.n_users() != data.train.n_users() || file.state.n_items() != data.train.n_items() {
        return Err(CliError::artifact(format!(
            "{}: model is {}x{}, split is {}x{}",
            path.display(),
            file.state.n_users(),
            file.state.n_items(),
            data.train.n_users(),
            data.train.n_items()
        )));
    }
    Ok(file)
}

/// Scores every fold's test split; `model` replaces the fold-0 model path.
pub fn eval(cfg: &ExperimentConfig, model: Option<&std::path::Path>) -> CliResult<Vec<EvalReport>> {
    let layout = Layout::new(cfg);
    let folds = if model.is_some() { 1 } else { artifacts::fold_count(&layout)? };
    let dir = layout.prepare(Kind::Reports, cfg)?;
    let mut reports = Vec::new();
    for fold in 0..folds {
        let data = artifacts::read_split(&layout, fold)?;
        let path = model.map_or_else(|| layout.model_path(fold), |p| p.to_path_buf());
        let file = load_model(&path, &data)?;
        let report = evaluate(
            &file.state,
            &data.train,
            &data.test,
            Some(&data.valid),
            &cfg.eval.cutoffs,
            &cfg.groups(),
            fold,
        )?;
        println!("fold {fold}\n{}", report.summary());
        reports.push(report);
    }
    let path = dir.join("report.csv");
    let mut w = artifacts::writer(&path)?;
    EvalReport::write_csv_header(&mut w).context(path.display())?;
    for r in &reports {
        r.write_csv_rows(&mut w).context(path.display())?;
    }
    w.flush().context(path.display())?;
    println!("report: {}", path.display());
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub index: usize,
    pub k: usize,
    pub lambda: f64,
    pub lambda_context: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub cell: GridCell,
    pub result: Result<f64, String>,
}

/// Every combination of the configured grid axes, in a fixed order.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<GridCell> {
    let g = &cfg.grid;
    let pairs: Vec<(f64, f64)> = if g.lambda_context.is_empty() {
        g.lambda.iter().map(|&l| (l, l)).collect()
    } else {
        g.lambda
            .iter()
            .flat_map(|&l1| g.lambda_context.iter().map(move |&l2| (l1, l2)))
            .collect()
    };
    let ratios: Vec<Option<f64>> = if cfg.implicit() {
        g.ratio.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut cells = Vec::new();
    for &k in &g.k {
        for &(lambda, lambda_context) in &pairs {
            for &ratio in &ratios {
                cells.push(GridCell {
                    index: cells.len(),
                    k,
                    lambda,
                    lambda_context,
                    ratio,
                });
            }
        }
    }
    cells
}

/// Trains each grid cell on fold 0 and ranks the cells by validation
/// NDCG@100, best first. A failing cell is recorded and the grid goes on.
pub fn grid(cfg: &ExperimentConfig) -> CliResult<Vec<GridRow>> {
    let layout = Layout::new(cfg);
    artifacts::fold_count(&layout)?;
    let cells = grid_cells(cfg);
    if cells.is_empty() {
        return Err(CliError::config("grid is empty"));
    }
    let dir = layout.prepare(Kind::Reports, cfg)?;
    let data = artifacts::read_split(&layout, 0)?;
    let base = cfg.hyperparams();
    let base_neg = cfg.negsample_config();

    let run = |cell: &GridCell| -> GridRow {
        let hp = Hyperparams {
            k: cell.k,
            lambda_factor: cell.lambda,
            lambda_context: cell.lambda_context,
            seed: derive_seed(base.seed, cell.index as u64),
            ..base.clone()
        };
        let ncfg = NegSampleConfig {
            ratio: cell.ratio.unwrap_or(base_neg.ratio),
            seed: derive_seed(base_neg.seed, cell.index as u64),
            ..base_neg.clone()
        };
        let result = train_fold(&layout, 0, &data, cfg.implicit(), &hp, &ncfg)
            .map(|t| t.valid_ndcg.unwrap_or(f64::NAN))
            .map_err(|e| e.to_string());
        if let Err(e) = &result {
            warn!("grid cell {}: {e}", cell.index);
        }
        GridRow {
            cell: cell.clone(),
            result,
        }
    };
    let mut rows: Vec<GridRow> = if cfg.grid.parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    rows.sort_by(|a, b| {
        let key = |r: &GridRow| match r.result {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        };
        key(b).total_cmp(&key(a)).then(a.cell.index.cmp(&b.cell.index))
    });

    let path = dir.join("grid.csv");
    let mut w = artifacts::writer(&path)?;
    writeln!(w, "rank,cell,k,lambda,lambda_context,ratio,valid_ndcg100,status").context(path.display())?;
    println!("{:>4} {:>4} {:>4} {:>8} {:>8} {:>6} {:>10}", "rank", "cell", "k", "lambda", "lambda2", "ratio", "ndcg@100");
    for (rank, r) in rows.iter().enumerate() {
        let c = &r.cell;
        let ratio = c.ratio.map_or(String::new(), |v| v.to_string());
        let (score, status) = match &r.result {
            Ok(v) => (v.to_string(), "ok".to_string()),
            Err(e) => (String::new(), format!("\"{}\"", e.replace('"', "'"))),
        };
        writeln!(
            w,
            "{},{},{},{},{},{ratio},{score},{status}",
            rank + 1,
            c.index,
            c.k,
            c.lambda,
            c.lambda_context
        )
        .context(path.display())?;
        println!(
            "{:>4} {:>4} {:>4} {:>8} {:>8} {:>6} {:>10}",
            rank + 1,
            c.index,
            c.k,
            c.lambda,
            c.lambda_context,
            ratio,
            match &r.result {
                Ok(v) => format!("{v:.5}"),
                Err(_) => "failed".into(),
            }
        );
    }
    w.flush().context(path.display())?;
    println!("grid: {}", path.display());
    Ok(rows)
}

/// Draws one round of personalized negatives from each fold's trained model
/// and writes them as `user<TAB>item`.
pub fn negdump(cfg: &ExperimentConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let folds = artifacts::fold_count(&layout)?;
    let dir = layout.prepare(Kind::Reports, cfg)?;
    let ncfg = cfg.negsample_config();
    ncfg.validate()?;
    for fold in 0..folds {
        let data = artifacts::read_split(&layout, fold)?;
        let file = load_model(&layout.model_path(fold), &data)?;
        let prefs = Preferences::from_matrix(&data.train);
        let set = draw_negatives(&file.state, &prefs, &ncfg, 1)?;
        let path = dir.join(format!("fold{fold}.negatives.tsv"));
        let mut w = artifacts::writer(&path)?;
        set.write_dump(&mut w, data.train.user_ids(), data.train.item_ids())
            .context(path.display())?;
        w.flush().context(path.display())?;
        println!("fold {fold}: {} draws -> {}", set.total_draws(), path.display());
    }
    Ok(())
}
