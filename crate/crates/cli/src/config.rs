//! Experiment config files (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use exsplinet::dataio::CsvSchema;
use exsplinet::{EggDomain, Loss, ModelConfig, PinnConfig, TrainConfig};
use serde::Deserialize;

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "EXSPLINET_DATA_DIR";

/// A count or degree given once for all levels or per level.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerLevel {
    One(usize),
    Each(Vec<usize>),
}

impl PerLevel {
    fn expand(&self, levels: usize, key: &str) -> Result<Vec<usize>, String> {
        match self {
            PerLevel::One(v) => Ok(vec![*v; levels]),
            PerLevel::Each(v) if v.len() == levels => Ok(v.clone()),
            PerLevel::Each(v) => Err(format!("model.{key} has {} entries for {levels} levels", v.len())),
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            PerLevel::One(_) => None,
            PerLevel::Each(v) => Some(v.len()),
        }
    }
}

/// `inputs` and `outputs` default to what the data or problem implies.
/// `levels` may be omitted when any per-level key is a list.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub inputs: Option<usize>,
    pub outputs: Option<usize>,
    pub trees: usize,
    pub levels: Option<usize>,
    pub inner_counts: PerLevel,
    pub outer_counts: PerLevel,
    pub inner_degrees: PerLevel,
    pub outer_degrees: PerLevel,
}

impl ModelSection {
    pub fn resolve(&self, inputs: usize, outputs: usize) -> Result<ModelConfig, String> {
        let fields = [
            &self.inner_counts,
            &self.outer_counts,
            &self.inner_degrees,
            &self.outer_degrees,
        ];
        let levels = self
            .levels
            .or_else(|| fields.iter().find_map(|f| f.len()))
            .ok_or("model.levels is required when every per-level key is a single number")?;
        let check = |key: &str, given: Option<usize>, implied: usize| match given {
            Some(v) if v != implied => Err(format!("model.{key} = {v} but the data implies {implied}")),
            _ => Ok(()),
        };
        check("inputs", self.inputs, inputs)?;
        check("outputs", self.outputs, outputs)?;
        Ok(ModelConfig {
            inputs,
            outputs,
            trees: self.trees,
            inner_counts: self.inner_counts.expand(levels, "inner_counts")?,
            outer_counts: self.outer_counts.expand(levels, "outer_counts")?,
            inner_degrees: self.inner_degrees.expand(levels, "inner_degrees")?,
            outer_degrees: self.outer_degrees.expand(levels, "outer_degrees")?,
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Stratified,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub method: SplitMethod,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    /// A CSV file, min-max normalized unless `normalize = false`. With
    /// `split` the map is fitted on the whole file before splitting; with
    /// `test` it is fitted on the training file and applied to the test file.
    Csv {
        path: PathBuf,
        test: Option<PathBuf>,
        split: Option<Split>,
        #[serde(default = "yes")]
        normalize: bool,
        #[serde(default)]
        schema: CsvSchema,
    },
    Synthetic {
        name: String,
        train_samples: usize,
        test_samples: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

fn yes() -> bool {
    true
}

/// Training settings; the seed comes from the top level.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub loss: Option<Loss>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
}

impl TrainSection {
    pub fn resolve(&self, seed: u64, default_loss: Loss) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed,
            loss: self.loss.unwrap_or(default_loss),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperiment {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    pub interior_points: usize,
    pub boundary_points: usize,
    pub egg: Option<EggDomain>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnExperiment {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub pinn: PinnConfig,
}

pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Resolves a data path from a config. Absolute paths are used as given;
/// relative ones are looked up under `$EXSPLINET_DATA_DIR` when it is set,
/// and otherwise next to the config file and then in `../data` from it.
pub fn data_path(config_path: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(root).join(rel);
    }
    let dir = config_path.parent().unwrap_or(Path::new("."));
    let beside = dir.join(rel);
    let shared = dir.join("../data").join(rel);
    if !beside.exists() && shared.exists() {
        shared
    } else {
        beside
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(text: &str) -> ModelSection {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn per_level_values_expand() {
        let m = model("trees = 2\nlevels = 3\ninner_counts = 5\nouter_counts = [2, 3, 4]\ninner_degrees = 3\nouter_degrees = 1");
        let cfg = m.resolve(4, 1).unwrap();
        assert_eq!(cfg.inner_counts, vec![5; 3]);
        assert_eq!(cfg.outer_counts, vec![2, 3, 4]);
        assert_eq!(cfg.param_count(), 2 * 3 * 4 * 5 + 2 * 24);
    }

    #[test]
    fn inconsistent_models_are_rejected() {
        let m = model("trees = 1\ninner_counts = [2, 2]\nouter_counts = [2, 2, 2]\ninner_degrees = 1\nouter_degrees = 1");
        assert!(m.resolve(4, 3).unwrap_err().contains("outer_counts"));
        let m = model("trees = 1\ninner_counts = 2\nouter_counts = 2\ninner_degrees = 1\nouter_degrees = 1");
        assert!(m.resolve(4, 3).unwrap_err().contains("levels"));
        let m = model("inputs = 5\ntrees = 1\nlevels = 1\ninner_counts = 2\nouter_counts = 2\ninner_degrees = 1\nouter_degrees = 1");
        assert!(m.resolve(4, 3).unwrap_err().contains("inputs"));
    }

    #[test]
    fn data_sections_reject_unknown_keys() {
        let ok: Result<DataSection, _> = toml::from_str("source = \"synthetic\"\nname = \"exp1\"\ntrain_samples = 10\ntest_samples = 5");
        assert!(ok.is_ok());
        let bad: Result<DataSection, _> =
            toml::from_str("source = \"synthetic\"\nname = \"exp1\"\ntrain_samples = 10\ntest_samples = 5\nnoise = 1");
        assert!(bad.is_err());
    }
}
