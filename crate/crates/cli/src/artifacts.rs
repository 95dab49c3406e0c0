//! On-disk layout: `<dir>/{splits,sppmi,models,reports}/<run_id>/`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rme::cooccur::SppmiMatrix;
use rme::ingest::{Cell, InteractionMatrix, Label, Split};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Context};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Splits,
    Sppmi,
    Models,
    Reports,
}

impl Kind {
    fn dir_name(self) -> &'static str {
        match self {
            Kind::Splits => "splits",
            Kind::Sppmi => "sppmi",
            Kind::Models => "models",
            Kind::Reports => "reports",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
    run_id: String,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            root: cfg.output.dir.clone(),
            run_id: cfg.output.run_id.clone(),
        }
    }

    pub fn run_dir(&self, kind: Kind) -> PathBuf {
        self.root.join(kind.dir_name()).join(&self.run_id)
    }

    pub fn fold_dir(&self, kind: Kind, fold: usize) -> PathBuf {
        self.run_dir(kind).join(format!("fold{fold}"))
    }

    pub fn model_path(&self, fold: usize) -> PathBuf {
        self.run_dir(Kind::Models).join(format!("fold{fold}.model"))
    }

    pub fn history_path(&self, fold: usize) -> PathBuf {
        self.run_dir(Kind::Models).join(format!("fold{fold}.history.csv"))
    }

    pub fn sppmi_path(&self, fold: usize, name: &str) -> PathBuf {
        self.fold_dir(Kind::Sppmi, fold).join(format!("{name}.sppmi"))
    }

    /// Creates the run folder for `kind` and writes the effective config
    /// into it.
    pub fn prepare(&self, kind: Kind, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
        let dir = self.run_dir(kind);
        fs::create_dir_all(&dir).context(dir.display())?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, cfg.to_toml()?).context(path.display())?;
        Ok(dir)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).context(parent.display())?;
    }
    Ok(BufWriter::new(File::create(path).context(path.display())?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::artifact(format!("{}: {e} (run the earlier step first?)", path.display())))
}

fn write_ids(path: &Path, ids: &[String]) -> CliResult<()> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}").context(path.display())?;
    }
    w.flush().context(path.display())
}

fn read_ids(path: &Path) -> CliResult<Vec<String>> {
    open(path)?.lines().collect::<Result<_, _>>().context(path.display())
}

/// `user<TAB>item<TAB>label<TAB>timestamp` with dense indices; label is
/// `1` (liked) or `-1` (disliked), a missing timestamp is `-`.
fn write_cells(path: &Path, m: &InteractionMatrix) -> CliResult<()> {
    let mut w = create(path)?;
    for c in m.cells() {
        let label = if c.label == Label::Liked { 1 } else { -1 };
        let ts = c.timestamp.map_or_else(|| "-".to_string(), |t| t.to_string());
        writeln!(w, "{}\t{}\t{label}\t{ts}", c.user, c.item).context(path.display())?;
    }
    w.flush().context(path.display())
}

fn read_cells(path: &Path) -> CliResult<Vec<Cell>> {
    let bad = |line: usize, what: &str| CliError::artifact(format!("{}:{line}: {what}", path.display()));
    let mut cells = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.context(path.display())?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 fields"));
        }
        let label = match f[2] {
            "1" => Label::Liked,
            "-1" => Label::Disliked,
            _ => return Err(bad(i + 1, "label must be 1 or -1")),
        };
        cells.push(Cell {
            user: f[0].parse().map_err(|_| bad(i + 1, "bad user index"))?,
            item: f[1].parse().map_err(|_| bad(i + 1, "bad item index"))?,
            label,
            timestamp: match f[3] {
                "-" => None,
                t => Some(t.parse().map_err(|_| bad(i + 1, "bad timestamp"))?),
            },
        });
    }
    Ok(cells)
}

pub fn write_split(layout: &Layout, fold: usize, split: &Split) -> CliResult<()> {
    let run = layout.run_dir(Kind::Splits);
    write_ids(&run.join("users.txt"), split.train.user_ids())?;
    write_ids(&run.join("items.txt"), split.train.item_ids())?;
    let dir = layout.fold_dir(Kind::Splits, fold);
    write_cells(&dir.join("train.tsv"), &split.train)?;
    write_cells(&dir.join("valid.tsv"), &split.valid)?;
    write_cells(&dir.join("test.tsv"), &split.test)?;
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, split.manifest().to_string()).context(manifest.display())
}

/// Train, validation and test views of one fold.
pub struct FoldData {
    pub train: InteractionMatrix,
    pub valid: InteractionMatrix,
    pub test: InteractionMatrix,
}

pub fn read_split(layout: &Layout, fold: usize) -> CliResult<FoldData> {
    let run = layout.run_dir(Kind::Splits);
    let users = read_ids(&run.join("users.txt"))?;
    let items = read_ids(&run.join("items.txt"))?;
    let dir = layout.fold_dir(Kind::Splits, fold);
    let load = |name: &str| -> CliResult<InteractionMatrix> {
        let path = dir.join(name);
        InteractionMatrix::new(read_cells(&path)?, users.clone(), items.clone())
            .map_err(|e| CliError::artifact(format!("{}: {e}", path.display())))
    };
    Ok(FoldData {
        train: load("train.tsv")?,
        valid: load("valid.tsv")?,
        test: load("test.tsv")?,
    })
}

pub fn write_sppmi(path: &Path, m: &SppmiMatrix) -> CliResult<()> {
    let mut w = create(path)?;
    m.write_dump(&mut w).context(path.display())?;
    w.flush().context(path.display())
}

pub fn read_sppmi(path: &Path) -> CliResult<SppmiMatrix> {
    SppmiMatrix::read_dump(open(path)?).context(path.display())
}

/// Number of folds written by `prep`.
pub fn fold_count(layout: &Layout) -> CliResult<usize> {
    let mut n = 0;
    while layout.fold_dir(Kind::Splits, n).join("train.tsv").exists() {
        n += 1;
    }
    if n == 0 {
        return Err(CliError::artifact(format!(
            "no splits under {} (run prep first)",
            layout.run_dir(Kind::Splits).display()
        )));
    }
    Ok(n)
}

pub fn writer(path: &Path) -> CliResult<BufWriter<File>> {
    create(path)
}
