//! Flag/config-file merging and the per-dataset diagnosis description.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use dynrca::config::{ExperimentConfig, SystemSelector};
use dynrca::dynamics::Trajectory;
use dynrca::graph::SummaryGraph;
use dynrca::io::{read_text, trajectory_from_csv};
use dynrca::models::Optimizer;
use dynrca::pipeline::CandidateMode;
use dynrca::scoring::Classifier;
use dynrca::RcaError;

/// Overlays `patch` onto `base`; nulls and empty arrays in `patch` mean
/// "not given" and leave `base` alone.
pub fn overlay(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                if v.is_null() || v.as_array().is_some_and(Vec::is_empty) {
                    continue;
                }
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parsed flags with the `--config` file underneath them. Config keys are
/// the long flag names with underscores.
pub fn merge_with_config<T>(flags: &T, config: Option<&Path>) -> anyhow::Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let mut base: serde_json::Value =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("config file {}", path.display()))?;
    if !base.is_object() {
        return Err(RcaError::Config(format!("{} must hold a JSON object", path.display())).into());
    }
    overlay(&mut base, &serde_json::to_value(flags)?);
    serde_json::from_value(base).map_err(|e| RcaError::Config(format!("{}: {e}", path.display())).into())
}

/// Flags shared by every experiment subcommand.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Common {
    /// Random seed (required, here or in the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter preset: lin, fhn, benchmark, river.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of contiguous validation folds.
    #[arg(long)]
    pub splits: Option<usize>,
    /// Minibatch size; 0 means full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Counterfactual samples per candidate.
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub t_train: Option<usize>,
    #[arg(long)]
    pub t_factum: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    /// Experiment configuration: `base` (or the named preset), then these
    /// overrides.
    pub fn experiment(
        &self,
        base: Option<ExperimentConfig>,
        fallback: SystemSelector,
    ) -> anyhow::Result<ExperimentConfig> {
        let base = match (&self.preset, base) {
            (Some(p), _) => ExperimentConfig::preset(p)?,
            (None, Some(b)) => b,
            (None, None) => ExperimentConfig::for_system(fallback),
        };
        let mut train = serde_json::json!({"lr": self.lr, "epochs": self.epochs, "splits": self.splits});
        if let Some(b) = self.batch_size {
            train["batch_size"] = if b == 0 { serde_json::Value::Null } else { b.into() };
        }
        if let Some(o) = &self.optimizer {
            train["optimizer"] = match o.as_str() {
                "adam" => serde_json::to_value(Optimizer::adam())?,
                "sgd" => serde_json::to_value(Optimizer::Sgd)?,
                other => return Err(RcaError::Config(format!("unknown optimizer '{other}' (adam, sgd)")).into()),
            };
        }
        let patch = serde_json::json!({
            "seed": self.seed,
            "n_samples": self.n_samples,
            "t_train": self.t_train,
            "t_factum": self.t_factum,
            "output_dir": self.out,
            "train": train,
        });
        // nulls in `train` mean "keep", except an explicit full-batch request
        let mut cleaned = serde_json::to_value(&base)?;
        overlay(&mut cleaned, &patch);
        if self.batch_size == Some(0) {
            cleaned["train"]["batch_size"] = serde_json::Value::Null;
        }
        let cfg: ExperimentConfig = serde_json::from_value(cleaned).map_err(|e| RcaError::Config(e.to_string()))?;
        cfg.validate()?;
        let seed = cfg.require_seed()?;
        Ok(ExperimentConfig { train: cfg.train.clone().with_seed(seed), ..cfg })
    }
}

/// Classifier choice as stored in `diagnosis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    /// Fixed per-dimension corridor around the normal-data mean of `node`.
    Corridor { node: String, k: f64 },
    /// Band around a reference trajectory file.
    Band { reference: PathBuf, sigma: f64, k: f64 },
    /// Log-likelihood under the fitted normal model.
    Loglik,
    /// Z-score of `node` against normal-data moments.
    Zscore { node: String, threshold: f64 },
}

impl ClassifierSpec {
    /// `None` for the log-likelihood, which needs the fitted model.
    pub fn build(
        &self,
        graph: &SummaryGraph,
        normal: &[Trajectory],
        base: &Path,
    ) -> anyhow::Result<Option<Classifier>> {
        Ok(match self {
            ClassifierSpec::Corridor { node, k } => {
                Some(Classifier::corridor_from_data(graph, graph.index_of(node)?, normal, *k)?)
            }
            ClassifierSpec::Band { reference, sigma, k } => {
                let path = base.join(reference);
                let e = trajectory_from_csv(&read_text(&path)?, graph)?;
                Some(Classifier::band(e.values().clone(), vec![*sigma; graph.total_dim()], *k)?)
            }
            ClassifierSpec::Loglik => None,
            ClassifierSpec::Zscore { node, threshold } => {
                Some(Classifier::zscore_from_data(graph, graph.index_of(node)?, normal, *threshold)?)
            }
        })
    }
}

/// How a dataset wants to be diagnosed; written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSpec {
    pub classifier: ClassifierSpec,
    pub candidates: CandidateMode,
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl Default for DiagnosisSpec {
    fn default() -> Self {
        Self { classifier: ClassifierSpec::Loglik, candidates: CandidateMode::Sites, exclude: vec![] }
    }
}

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const DIAGNOSIS_FILE: &str = "diagnosis.json";

pub fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(path)?;
    Ok(Some(serde_json::from_str(&text).map_err(RcaError::from).with_context(|| path.display().to_string())?))
}
