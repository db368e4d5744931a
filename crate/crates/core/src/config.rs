//! Experiment presets and JSON overrides.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::models::TrainConfig;
use crate::pipeline::SystemKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSelector {
    Linear4,
    Fhn,
    Benchmark,
    River,
}

impl SystemSelector {
    /// The injection system behind this selector, if any.
    pub fn injection_system(self) -> Option<SystemKind> {
        match self {
            SystemSelector::Linear4 => Some(SystemKind::Linear),
            SystemSelector::Fhn => Some(SystemKind::Fhn),
            _ => None,
        }
    }
}

impl FromStr for SystemSelector {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "linear4" | "linear" | "lin" => Ok(SystemSelector::Linear4),
            "fhn" => Ok(SystemSelector::Fhn),
            "benchmark" => Ok(SystemSelector::Benchmark),
            "river" => Ok(SystemSelector::River),
            other => Err(RcaError::Config(format!("unknown system '{other}' (linear4, fhn, benchmark, river)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub system: SystemSelector,
    pub train: TrainConfig,
    pub t_train: usize,
    pub t_factum: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub const PRESETS: [&'static str; 4] = ["lin", "fhn", "benchmark", "river"];

    /// Named preset. The benchmark uses equal normal and factum lengths; 100
    /// is the shortest benchmarked length.
    pub fn preset(name: &str) -> Result<Self> {
        let (system, t_train, t_factum) = match name {
            "lin" | "lin-system" | "linear4" => (SystemSelector::Linear4, 1000, 20),
            "fhn" => (SystemSelector::Fhn, 1000, 50),
            "benchmark" => (SystemSelector::Benchmark, 100, 100),
            "river" => (SystemSelector::River, 300_000, 90),
            other => return Err(RcaError::Config(format!("unknown preset '{other}' (lin, fhn, benchmark, river)"))),
        };
        Ok(Self {
            preset: name.to_string(),
            system,
            train: TrainConfig::by_name(name)?,
            t_train,
            t_factum,
            n_samples: crate::pipeline::DiagnoseConfig::DEFAULT_SAMPLES,
            seed: None,
            output_dir: None,
        })
    }

    /// Default preset of a system.
    pub fn for_system(system: SystemSelector) -> Self {
        let name = match system {
            SystemSelector::Linear4 => "lin",
            SystemSelector::Fhn => "fhn",
            SystemSelector::Benchmark => "benchmark",
            SystemSelector::River => "river",
        };
        Self::preset(name).expect("built-in preset")
    }

    /// Deep-merges a JSON object onto this config. Nested objects such as
    /// `train` merge field by field.
    pub fn overlay(&self, patch: &serde_json::Value) -> Result<Self> {
        if !patch.is_object() {
            return Err(RcaError::Config("config file must hold a JSON object".into()));
        }
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, patch);
        let out: Self = serde_json::from_value(base).map_err(|e| RcaError::Config(format!("config: {e}")))?;
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.t_train < 2 || self.t_factum < 2 {
            return Err(RcaError::Config("trajectory lengths must be at least 2".into()));
        }
        if self.n_samples == 0 {
            return Err(RcaError::Config("n_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| RcaError::Config("a seed is required (--seed or \"seed\" in the config)".into()))
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
