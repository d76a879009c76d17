//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//! k = 10
//!
//! [data]
//! synthetic = { users = 200, items = 500, categories = 20 }
//!
//! [transfer]
//! tau = 3
//! n_clusters = 10
//! ```
//!
//! Every section and key is optional; omitted values take the defaults below.
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Delimiter, SyntheticSpec};
use crate::domain::NoveltyMode;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, GuidedInitConfig};
use crate::scorer::TrainConfig;
use crate::selection::SelectionPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `user, item, timestamp, categories` rows. Ignored when `synthetic` is set.
    pub interactions: Option<PathBuf>,
    /// `user, item, score` rows.
    pub scores: Option<PathBuf>,
    /// `item, e_1, …, e_d` rows; category multi-hot vectors are used without it.
    pub embeddings: Option<PathBuf>,
    /// Output directory of a previous `prepare`; when set, `run` reads it
    /// instead of rebuilding the data.
    pub prepared: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub delimiter: Delimiter,
    /// Number of categories; inferred from the interactions when absent.
    pub total_categories: Option<usize>,
    pub negatives: usize,
    pub max_malformed_rows: usize,
    /// Assign `1/(j+1)` to the j-th candidate instead of reading scores.
    pub uniform_fallback: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            interactions: None,
            scores: None,
            embeddings: None,
            prepared: None,
            synthetic: None,
            delimiter: Delimiter::Tab,
            total_categories: None,
            negatives: 99,
            max_malformed_rows: 0,
            uniform_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Transfer every `tau` generations; absent disables transfer.
    pub tau: Option<usize>,
    pub n_clusters: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            tau: Some(3),
            n_clusters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub ks: Vec<usize>,
    pub betas: Vec<f64>,
    pub novelty: NoveltyMode,
    /// Average per-user F_β instead of combining the corpus means.
    pub per_user_f_beta: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            ks: vec![5, 10],
            betas: vec![1.0, 2.0],
            novelty: NoveltyMode::Normalized,
            per_user_f_beta: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub mmr_lambda: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { mmr_lambda: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub threads: Option<usize>,
    /// Recommendation list length.
    pub k: usize,
    pub data: DataConfig,
    pub evolution: EvolutionConfig,
    pub init: GuidedInitConfig,
    pub scorer: TrainConfig,
    pub transfer: TransferConfig,
    pub selection: SelectionPolicy,
    pub evaluation: EvaluationConfig,
    pub baseline: BaselineConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            threads: None,
            k: 10,
            data: DataConfig::default(),
            evolution: EvolutionConfig::default(),
            init: GuidedInitConfig::default(),
            scorer: TrainConfig::default(),
            transfer: TransferConfig::default(),
            selection: SelectionPolicy::default(),
            evaluation: EvaluationConfig::default(),
            baseline: BaselineConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.evolution.validate()?;
        self.scorer.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.transfer.tau == Some(0) {
            return Err(Error::Config("transfer.tau must be at least 1".into()));
        }
        if self.transfer.n_clusters == 0 || self.transfer.n_clusters > self.evolution.pop_size {
            return Err(Error::Config(format!(
                "transfer.n_clusters must lie in 1..={}",
                self.evolution.pop_size
            )));
        }
        if self.init.n_user_clusters == 0 {
            return Err(Error::Config(
                "init.n_user_clusters must be at least 1".into(),
            ));
        }
        if self.evaluation.ks.iter().any(|&k| k == 0 || k > self.k) {
            return Err(Error::Config(format!(
                "evaluation.ks must lie in 1..={}",
                self.k
            )));
        }
        if self
            .evaluation
            .betas
            .iter()
            .any(|b| !(b.is_finite() && *b > 0.0))
        {
            return Err(Error::Config("evaluation.betas must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.data.interactions.is_none()
            && self.data.synthetic.is_none()
            && self.data.prepared.is_none()
        {
            return Err(Error::Config(
                "data needs one of interactions, synthetic or prepared".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Canonical TOML of every setting that can change results.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
