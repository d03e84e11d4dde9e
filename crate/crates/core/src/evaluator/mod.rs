//! Affinity oracles. Evaluators are registered by name and selected at run
//! time; the search loop only sees the [`Evaluator`] trait.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::config::RunConfig;
use crate::error::{Error, EvalError};
use crate::genome::ArchitectureGenome;
use crate::space::SearchSpace;

pub mod neural;
pub mod surrogate;
pub mod weights;

pub use neural::{inherit_plan, FullTrainReport, InheritPlan, NeuralEvaluator, TrainOutcome};
pub use surrogate::{SurrogateConfig, SurrogateEvaluator, SurrogateLandscape};
pub use weights::{StoredNetwork, WeightStore};

/// Opaque key into an evaluator's weight store.
pub type WeightHandle = u64;

/// The genome and stored weights a candidate may inherit from.
#[derive(Debug, Clone, Copy)]
pub struct ParentLink<'a> {
    pub genome: &'a ArchitectureGenome,
    pub weights: WeightHandle,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    pub genome: &'a ArchitectureGenome,
    pub parent: Option<ParentLink<'a>>,
    /// Selects the training/validation split and any training randomness.
    pub data_seed: u64,
}

impl<'a> EvalRequest<'a> {
    pub fn fresh(genome: &'a ArchitectureGenome, data_seed: u64) -> Self {
        Self {
            genome,
            parent: None,
            data_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub affinity: f64,
    pub weights: Option<WeightHandle>,
    /// Training epochs spent (zero for evaluators that do not train).
    pub epochs: usize,
}

pub trait Evaluator {
    fn name(&self) -> &'static str;

    fn check_space(&self, space: &SearchSpace) -> Result<(), EvalError>;

    /// Affinity in [0, 1], deterministic given the genome, the inherited
    /// weights and the data seed.
    fn evaluate(&mut self, request: &EvalRequest<'_>) -> Result<Evaluation, EvalError>;

    fn supports_weights(&self) -> bool {
        false
    }

    /// Writes the weights behind `handle` under `dir`. Evaluators without a
    /// weight store do nothing and return `false`.
    fn persist_weights(&self, _handle: WeightHandle, _dir: &Path) -> Result<bool, EvalError> {
        Ok(false)
    }

    /// Evaluator-specific scalar metrics of a final population.
    fn run_metrics(&self, _population: &[&ArchitectureGenome]) -> serde_json::Map<String, serde_json::Value> {
        serde_json::Map::new()
    }

    /// Concrete access for pipelines that need trained networks.
    fn as_neural(&mut self) -> Option<&mut NeuralEvaluator> {
        None
    }
}

/// Builds an evaluator for a space from the run configuration and seed.
pub type EvaluatorFactory =
    fn(&RunConfig, &Arc<SearchSpace>, u64) -> Result<Box<dyn Evaluator>, Error>;

pub struct EvaluatorRegistry {
    factories: BTreeMap<&'static str, EvaluatorFactory>,
}

impl EvaluatorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: EvaluatorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(
        &self,
        name: &str,
        cfg: &RunConfig,
        space: &Arc<SearchSpace>,
        seed: u64,
    ) -> Result<Box<dyn Evaluator>, Error> {
        let factory = self.factories.get(name).ok_or_else(|| Error::Unknown {
            kind: "evaluator",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        let evaluator = factory(cfg, space, seed)?;
        evaluator.check_space(space)?;
        Ok(evaluator)
    }
}

impl Default for EvaluatorRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register("surrogate", |cfg, space, seed| {
            Ok(Box::new(SurrogateEvaluator::new(
                SurrogateLandscape::generate(space, &cfg.surrogate, seed),
            )))
        });
        registry.register("neural", |cfg, _space, seed| {
            Ok(Box::new(NeuralEvaluator::from_config(&cfg.neural, seed)?))
        });
        registry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{block_space, sequential_space};

    #[test]
    fn registry_lists_and_builds() {
        let registry = EvaluatorRegistry::default();
        assert_eq!(registry.names(), vec!["neural", "surrogate"]);
        let space = Arc::new(block_space());
        let e = registry.build("surrogate", &RunConfig::default(), &space, 1).unwrap();
        assert_eq!(e.name(), "surrogate");
        assert!(matches!(
            registry.build("oracle", &RunConfig::default(), &space, 1),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn neural_rejects_block_space() {
        let registry = EvaluatorRegistry::default();
        let mut cfg = RunConfig::default();
        cfg.neural.dataset = crate::config::DatasetSource::Procedural {
            classes: 2,
            train: 20,
            test: 10,
            noise: 0.1,
            seed: 1,
        };
        let blocks = Arc::new(block_space());
        assert!(matches!(
            registry.build("neural", &cfg, &blocks, 1),
            Err(Error::Eval(EvalError::Incompatible { .. }))
        ));
        let seq = Arc::new(sequential_space());
        assert!(registry.build("neural", &cfg, &seq, 1).is_ok());
    }
}
