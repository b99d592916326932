use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, CliError};
use crate::data::{self, gen_toy, load_idx, MultimodalDataset, ToyConfig};
use crate::eval::EvalConfig;
use crate::mmvae::{Aggregation, Likelihood, ModelConfig};

/// Top-level TOML run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, shuffling and training noise.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub aggregation: Aggregation,
    pub latent_dim: usize,
    pub epochs: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_likelihood")]
    pub likelihood: Likelihood,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_likelihood() -> Likelihood {
    Likelihood::Bernoulli
}

fn default_beta() -> f64 {
    2.5
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    64
}

fn default_fraction() -> f64 {
    0.8
}

/// Dataset selection: exactly one of `[data.toy]` or `[data.idx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub toy: Option<ToyConfig>,
    #[serde(default)]
    pub idx: Option<IdxSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSection {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::input(format!("{origin}: {e}")))?;
        cfg.validate()
            .map_err(|e| CliError::input(format!("{origin}: {}", e.message)))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // relative IDX paths are taken from the config's directory
        if let (Some(idx), Some(base)) = (cfg.data.idx.as_mut(), path.parent()) {
            idx.images = base.join(&idx.images);
            idx.labels = base.join(&idx.labels);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.toy, &self.data.idx) {
            (Some(toy), None) => toy.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(CliError::input(
                    "data: exactly one of [data.toy] or [data.idx] is required",
                ))
            }
        }
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::input(format!(
                "data.train_fraction must lie in (0, 1), got {f}"
            )));
        }
        if self.eval.ll_examples > 0 && self.eval.ll_samples == 0 {
            return Err(CliError::input("eval.ll_samples must be >= 1"));
        }
        // input dims are only known once the data is built; a placeholder checks the rest
        self.model_config(vec![1])
            .validate()
            .map_err(|e| CliError::input(format!("model: {e}")))
    }

    pub fn model_config(&self, input_dims: Vec<usize>) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_dims,
            latent_dim: m.latent_dim,
            hidden: m.hidden.clone(),
            likelihood: m.likelihood,
            aggregation: m.aggregation,
            beta: m.beta,
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            epochs: m.epochs,
            seed: self.seed,
        }
    }

    /// Builds the dataset and its stratified train/test split.
    pub fn datasets(&self) -> Result<(MultimodalDataset, MultimodalDataset), CliError> {
        let full = match (&self.data.toy, &self.data.idx) {
            (Some(toy), _) => gen_toy(toy)?,
            (_, Some(idx)) => load_idx(&idx.images, &idx.labels)?,
            (None, None) => unreachable!("validated"),
        };
        Ok(data::split(&full, self.data.train_fraction, self.data.split_seed)?)
    }
}
