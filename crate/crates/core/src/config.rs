//! Run configuration. Every section has defaults, so a config file only needs
//! the fields it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, GenomeError};
use crate::evaluator::surrogate::SurrogateConfig;
use crate::mutation::MutationConfig;

/// Meta-parameters of the clonal-selection loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub population: usize,
    pub initial_depth: usize,
    pub clones_per_parent: usize,
    pub insertions: usize,
    pub augment_copies: usize,
    pub patience: usize,
    pub tau: f64,
    pub max_generations: usize,
    /// Hard cap on evaluator calls; the run stops before exceeding it.
    pub max_evaluations: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 12,
            initial_depth: 3,
            clones_per_parent: 3,
            insertions: 2,
            augment_copies: 3,
            patience: 2,
            tau: 0.0075,
            max_generations: 20,
            max_evaluations: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), GenomeError> {
        let fail = |m: &str| Err(GenomeError::Config(m.to_string()));
        if self.population < 2 {
            return fail("population must be at least 2");
        }
        if self.initial_depth < 1 {
            return fail("initial depth must be at least 1");
        }
        if self.clones_per_parent < 1 {
            return fail("clones per parent must be at least 1");
        }
        if self.augment_copies < 1 {
            return fail("augmented copies per parent must be at least 1");
        }
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        Ok(())
    }
}

/// Partial-evaluation training regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fraction of the training pool used for training each candidate.
    pub subset_fraction: f64,
    /// Fraction of the training pool held out for validation.
    pub val_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub cosine: bool,
    pub early_stop_patience: usize,
    pub early_stop_threshold: f64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            subset_fraction: 0.2,
            val_fraction: 0.2,
            batch_size: 32,
            learning_rate: 0.01,
            weight_decay: 1e-5,
            beta1: 0.95,
            beta2: 0.99,
            cosine: true,
            early_stop_patience: 2,
            early_stop_threshold: 0.005,
            max_epochs: 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(GenomeError::Config("subset_fraction must lie in (0, 1]".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(GenomeError::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.max_epochs < 1 {
            return Err(GenomeError::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 1 || !(self.learning_rate > 0.0) {
            return Err(GenomeError::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Continued training of committee members on the whole training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FullTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the cosine schedule restarts.
    pub restarts: Vec<usize>,
    pub batch_size: usize,
}

impl Default for FullTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.01 / 3.0,
            restarts: vec![25],
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Procedural {
        classes: usize,
        train: usize,
        test: usize,
        noise: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Procedural {
            classes: 4,
            train: 1500,
            test: 500,
            noise: 0.35,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub stem_width: usize,
    pub dropout: f64,
    pub dataset: DatasetSource,
    pub partial: TrainConfig,
    pub full: FullTrainConfig,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            stem_width: 16,
            dropout: 0.2,
            dataset: DatasetSource::default(),
            partial: TrainConfig::default(),
            full: FullTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub depth_min: usize,
    pub depth_max: usize,
    /// Evaluation budget; when absent the AIS budget for the same config is
    /// estimated from the search settings.
    pub budget: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            depth_min: 3,
            depth_max: 12,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RetainPolicy {
    All,
    TopFraction { fraction: f64 },
}

impl RetainPolicy {
    /// Committee size for a population of `n`.
    pub fn size(&self, n: usize) -> usize {
        match *self {
            RetainPolicy::All => n,
            RetainPolicy::TopFraction { fraction } => {
                ((n as f64 * fraction).round() as usize).clamp(1, n.max(1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeights {
    /// Affinity from partial evaluation.
    Affinity,
    /// Validation accuracy after full training.
    FullValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitteeConfig {
    pub retain: RetainPolicy,
    pub weights: VoteWeights,
    pub full_train: bool,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            retain: RetainPolicy::All,
            weights: VoteWeights::Affinity,
            full_train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub parents: usize,
    pub clones: usize,
    pub locality_depths: Vec<usize>,
    pub partial_genomes: usize,
    pub partial_depths: Vec<usize>,
    pub progressive_genomes: usize,
    pub progressive_depths: Vec<usize>,
    pub two_tailed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            parents: 100,
            clones: 10,
            locality_depths: vec![3, 9],
            partial_genomes: 40,
            partial_depths: vec![3, 9],
            progressive_genomes: 60,
            progressive_depths: vec![3, 6, 9],
            two_tailed: true,
        }
    }
}

/// Everything a CLI run needs besides the space, evaluator name and seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub mutation: MutationConfig,
    pub surrogate: SurrogateConfig,
    pub neural: NeuralConfig,
    pub baseline: BaselineConfig,
    pub committee: CommitteeConfig,
    pub experiments: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        self.search.validate()?;
        self.mutation.validate()?;
        self.neural.partial.validate()?;
        if self.baseline.depth_min < 1 || self.baseline.depth_min > self.baseline.depth_max {
            return Err(GenomeError::Config("baseline depth range is empty".into()));
        }
        if let RetainPolicy::TopFraction { fraction } = self.committee.retain {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(GenomeError::Config("retain fraction must lie in (0, 1]".into()));
            }
        }
        if self.committee.weights == VoteWeights::FullValidation && !self.committee.full_train {
            return Err(GenomeError::Config(
                "validation-accuracy vote weights need full training".into(),
            ));
        }
        Ok(())
    }
}
