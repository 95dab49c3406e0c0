//! Experiment configuration: a TOML file with one section per module, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rme::eval::UserGroupSpec;
use rme::ingest::{BinarizePolicy, EventFormat, SplitMode, SplitSpec};
use rme::model::{Hyperparams, Toggles, Variant};
use rme::negsample::NegSampleConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    /// `ml`, `tsv` or `csv`.
    pub format: String,
    pub feedback: Feedback,
    pub like_min: f64,
    pub dislike_max: f64,
    pub like_min_count: f64,
    pub user_core: usize,
    pub item_core: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: PathBuf::from("ratings.dat"),
            format: "ml".into(),
            feedback: Feedback::Explicit,
            like_min: 4.0,
            dislike_max: 2.0,
            like_min_count: 1.0,
            user_core: 5,
            item_core: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// `time` or `random`.
    pub mode: String,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let d = SplitSpec::default();
        SplitConfig {
            mode: "time".into(),
            train: d.train_frac,
            valid: d.valid_frac,
            test: d.test_frac,
            seed: d.seed,
            folds: d.fold_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub k: usize,
    pub lambda: f64,
    /// Regularization of the context vectors; `lambda` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_context: Option<f64>,
    pub scale: f64,
    pub confidence: f64,
    pub w_liked: f64,
    pub w_disliked: f64,
    pub w_user: f64,
    pub shift: f64,
    pub max_sweeps: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        ModelConfig {
            variant: Variant::Rme.to_string(),
            k: h.k,
            lambda: h.lambda_factor,
            lambda_context: None,
            scale: h.scale,
            confidence: h.confidence,
            w_liked: h.w_liked_cooccur,
            w_disliked: h.w_disliked_cooccur,
            w_user: h.w_user_cooccur,
            shift: h.shift,
            max_sweeps: h.max_sweeps,
            patience: h.patience,
            seed: h.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegSampleSection {
    pub ratio: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub uniform: bool,
    pub cold_start: bool,
}

impl Default for NegSampleSection {
    fn default() -> Self {
        let d = NegSampleConfig::default();
        NegSampleSection {
            ratio: d.ratio,
            max_iter: d.max_iter,
            seed: d.seed,
            uniform: d.uniform,
            cold_start: d.cold_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    /// Users below this activity quantile are "cold".
    pub cold_quantile: f64,
    /// Users at or above this activity quantile are "active".
    pub active_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let g = UserGroupSpec::default();
        EvalConfig {
            cutoffs: vec![5, 10, 20, 50, 100],
            cold_quantile: g.lower,
            active_quantile: g.upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambda: Vec<f64>,
    pub k: Vec<usize>,
    /// Only used for implicit feedback.
    pub ratio: Vec<f64>,
    /// Non-empty switches to the λ₁ × λ₂ grid, λ₁ taken from `lambda`.
    pub lambda_context: Vec<f64>,
    pub parallel: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lambda: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0],
            k: (3..=10).map(|k| 10 * k).collect(),
            ratio: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lambda_context: Vec::new(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub run_id: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
            run_id: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub negsample: NegSampleSection,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub output: OutputConfig,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (`data.format=csv`).
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Reads `path` (defaults when `None`) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override `{ov}` is not section.key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| CliError::config(format!("override key `{key}` is not section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(CliError::config(format!("`{section}` is not a section")));
            };
            sec.insert(field.to_string(), parse_value(value.trim()));
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.format()?;
        self.variant()?;
        self.split_spec()?.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.hyperparams()
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(CliError::config("eval.cutoffs must be non-empty and positive"));
        }
        if self.data.user_core == 0 || self.data.item_core == 0 {
            return Err(CliError::config("data.user_core and data.item_core must be at least 1"));
        }
        if self.implicit() {
            self.negsample_config()
                .validate()
                .map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn implicit(&self) -> bool {
        self.data.feedback == Feedback::Implicit
    }

    pub fn format(&self) -> CliResult<EventFormat> {
        self.data.format.parse().map_err(|_| {
            CliError::config(format!("data.format `{}` is not one of ml, tsv, csv", self.data.format))
        })
    }

    pub fn binarize_policy(&self) -> BinarizePolicy {
        match self.data.feedback {
            Feedback::Explicit => BinarizePolicy::Explicit {
                like_min: self.data.like_min,
                dislike_max: self.data.dislike_max,
            },
            Feedback::Implicit => BinarizePolicy::Implicit {
                like_min_count: self.data.like_min_count,
            },
        }
    }

    pub fn split_spec(&self) -> CliResult<SplitSpec> {
        let mode: SplitMode = self
            .split
            .mode
            .parse()
            .map_err(|_| CliError::config(format!("split.mode `{}` is not time or random", self.split.mode)))?;
        Ok(SplitSpec {
            train_frac: self.split.train,
            valid_frac: self.split.valid,
            test_frac: self.split.test,
            mode,
            seed: self.split.seed,
            fold_count: self.split.folds,
        })
    }

    pub fn variant(&self) -> CliResult<Variant> {
        self.model
            .variant
            .parse()
            .map_err(|_| CliError::config(format!("model.variant `{}` is unknown", self.model.variant)))
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let m = &self.model;
        Hyperparams {
            k: m.k,
            lambda_factor: m.lambda,
            lambda_context: m.lambda_context.unwrap_or(m.lambda),
            scale: m.scale,
            confidence: m.confidence,
            w_liked_cooccur: m.w_liked,
            w_disliked_cooccur: m.w_disliked,
            w_user_cooccur: m.w_user,
            shift: m.shift,
            max_sweeps: m.max_sweeps,
            patience: m.patience,
            seed: m.seed,
            // the variant name is checked by validate()
            toggles: self.variant().map_or(Toggles::NONE, Variant::toggles),
        }
    }

    pub fn negsample_config(&self) -> NegSampleConfig {
        let n = &self.negsample;
        NegSampleConfig {
            ratio: n.ratio,
            max_iter: n.max_iter,
            seed: n.seed,
            uniform: n.uniform,
            cold_start: n.cold_start,
        }
    }

    pub fn groups(&self) -> UserGroupSpec {
        UserGroupSpec {
            lower: self.eval.cold_quantile,
            upper: self.eval.active_quantile,
        }
    }
}
