//! Affinity-scaled Gaussian mutation of cloned genomes.
//!
//! The mutation rate is `α = exp(−f_parent / ρ)` and the perturbation of the
//! zero-based layer `l` in a genome of depth `L` has standard deviation
//! `σ = α (l + 1) / L`, so the deepest layer moves with the full rate.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::GenomeError;
use crate::genome::{ArchitectureGenome, NodeGene};

/// Re-mutation attempts before a duplicate clone is dropped.
pub const MAX_UNIQUE_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationConfig {
    pub rho: f64,
    /// Scales σ for operation-type genes (0.5 suits spaces with many operations).
    pub operation_sigma_scale: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            rho: 0.2,
            operation_sigma_scale: 1.0,
        }
    }
}

impl MutationConfig {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(GenomeError::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.operation_sigma_scale > 0.0 && self.operation_sigma_scale.is_finite()) {
            return Err(GenomeError::Config(format!(
                "operation sigma scale must be positive, got {}",
                self.operation_sigma_scale
            )));
        }
        Ok(())
    }
}

pub fn mutation_rate(parent_affinity: f64, rho: f64) -> Result<f64, GenomeError> {
    if !(rho > 0.0) {
        return Err(GenomeError::Config(format!("rho must be positive, got {rho}")));
    }
    if !(0.0..=1.0).contains(&parent_affinity) {
        return Err(GenomeError::Argument(format!(
            "parent affinity {parent_affinity} outside [0, 1]"
        )));
    }
    Ok((-parent_affinity / rho).exp())
}

pub fn mutation_sigma(alpha: f64, layer_index: usize, depth: usize) -> Result<f64, GenomeError> {
    if layer_index >= depth {
        return Err(GenomeError::Argument(format!(
            "layer index {layer_index} out of range for depth {depth}"
        )));
    }
    Ok(alpha * (layer_index + 1) as f64 / depth as f64)
}

/// Draws δ ~ N(0, σ²).
pub fn sample_delta<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// `clamp(gene + δ, 0, 1)` with δ ~ N(0, σ²).
pub fn perturb<R: Rng + ?Sized>(gene: f64, sigma: f64, rng: &mut R) -> f64 {
    (gene + sample_delta(sigma, rng)).clamp(0.0, 1.0)
}

/// What changed (after discretization) at one node of a clone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeCategory {
    Unchanged,
    Connection,
    Aggregation,
    Operation,
    Hyperparameters,
}

#[derive(Debug, Clone)]
pub struct MutationOutcome {
    pub genome: ArchitectureGenome,
    pub alpha: f64,
    pub changes: Vec<ChangeCategory>,
}

impl MutationOutcome {
    pub fn connections_changed(&self) -> bool {
        self.changes.contains(&ChangeCategory::Connection)
    }
}

/// One line of the mutation event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub generation: usize,
    pub parent: String,
    pub clone: String,
    pub alpha: f64,
    pub changes: Vec<ChangeCategory>,
}

/// Mutates a copy of `parent`.
///
/// Connections (skip-connection spaces only) are perturbed first for every
/// node but v_1. If any discretized connection changed the clone is returned
/// as is. Otherwise each node perturbs its aggregation (indegree 2 only); if
/// that bin is unchanged it perturbs the operation type, resampling all
/// hyperparameter genes when the operation changes and perturbing each of
/// them when it does not.
pub fn mutate_clone<R: Rng + ?Sized>(
    parent: &ArchitectureGenome,
    parent_affinity: f64,
    cfg: &MutationConfig,
    rng: &mut R,
) -> Result<MutationOutcome, GenomeError> {
    cfg.validate()?;
    let alpha = mutation_rate(parent_affinity, cfg.rho)?;
    let depth = parent.depth();
    let space = parent.space().clone();
    let mut clone = parent.clone();
    let mut changes = vec![ChangeCategory::Unchanged; depth];

    if space.allows_skip_connections() {
        for i in 1..depth {
            let sigma = mutation_sigma(alpha, i, depth)?;
            let before = clone.connection(i);
            let node = &mut clone.nodes_mut()[i];
            node.indegree = perturb(node.indegree, sigma, rng);
            if clone.indegree(i) == 2 {
                let node = &mut clone.nodes_mut()[i];
                if before.0 == 1 {
                    // uniform over the predecessors v_0..v_{l-2}
                    node.second_input = rng.random();
                } else {
                    node.second_input = perturb(node.second_input, sigma, rng);
                }
            }
            if clone.connection(i) != before {
                changes[i] = ChangeCategory::Connection;
            }
        }
        if changes.contains(&ChangeCategory::Connection) {
            return Ok(MutationOutcome {
                genome: clone,
                alpha,
                changes,
            });
        }
    }

    for i in 0..depth {
        let sigma = mutation_sigma(alpha, i, depth)?;
        if clone.indegree(i) == 2 {
            let before = clone.aggregation(i);
            let node = &mut clone.nodes_mut()[i];
            node.aggregation = perturb(node.aggregation, sigma, rng);
            if clone.aggregation(i) != before {
                changes[i] = ChangeCategory::Aggregation;
                continue;
            }
        }
        let op_before = clone.operation_index(i);
        let node = &mut clone.nodes_mut()[i];
        node.operation = perturb(node.operation, sigma * cfg.operation_sigma_scale, rng);
        if clone.operation_index(i) != op_before {
            let count = clone.operation(i).hyperparams.len();
            clone.nodes_mut()[i].hyperparams = (0..count).map(|_| rng.random()).collect();
            changes[i] = ChangeCategory::Operation;
            continue;
        }
        let hp_before = clone.hyperparam_indices(i);
        for gene in &mut clone.nodes_mut()[i].hyperparams {
            *gene = perturb(*gene, sigma, rng);
        }
        if clone.hyperparam_indices(i) != hp_before {
            changes[i] = ChangeCategory::Hyperparameters;
        }
    }
    Ok(MutationOutcome {
        genome: clone,
        alpha,
        changes,
    })
}

/// Encodings already evaluated or reserved during a run, in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct EncodingRegistry {
    seen: HashSet<String>,
    order: Vec<String>,
}

impl EncodingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, encoding: &str) -> bool {
        self.seen.contains(encoding)
    }

    /// Returns false if the encoding was already present.
    pub fn insert(&mut self, encoding: &str) -> bool {
        if self.seen.insert(encoding.to_string()) {
            self.order.push(encoding.to_string());
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }
}

/// Produces up to `n_clones` mutated clones whose encodings are new to the
/// registry. Each clone gets up to [`MAX_UNIQUE_ATTEMPTS`] independent
/// mutations of the parent; clones that stay duplicates are dropped. Accepted
/// encodings are added to the registry.
pub fn clone_and_mutate_unique<R: Rng + ?Sized>(
    parent: &ArchitectureGenome,
    parent_affinity: f64,
    n_clones: usize,
    registry: &mut EncodingRegistry,
    cfg: &MutationConfig,
    rng: &mut R,
) -> Result<Vec<MutationOutcome>, GenomeError> {
    if n_clones < 1 {
        return Err(GenomeError::Argument("need at least one clone per parent".into()));
    }
    let mut out = Vec::with_capacity(n_clones);
    for _ in 0..n_clones {
        for _ in 0..MAX_UNIQUE_ATTEMPTS {
            let outcome = mutate_clone(parent, parent_affinity, cfg, rng)?;
            if registry.insert(&outcome.genome.encoding()) {
                out.push(outcome);
                break;
            }
        }
    }
    Ok(out)
}

/// A fresh node for augmentation: every gene uniform, so the number of
/// incoming edges is sampled where the space allows it.
pub fn random_node<R: Rng + ?Sized>(genome: &ArchitectureGenome, rng: &mut R) -> NodeGene {
    NodeGene::random(genome.space(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::random_genome;
    use crate::space::{block_space, sequential_space, OperationSpec, SearchSpace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn rate_examples() {
        assert_eq!(mutation_rate(0.0, 0.2).unwrap(), 1.0);
        assert!((mutation_rate(0.2, 0.2).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((mutation_rate(0.9, 0.2).unwrap() - 0.011108996538242306).abs() < 1e-15);
        assert!(mutation_rate(0.5, 0.0).is_err());
        assert!(mutation_rate(0.5, -1.0).is_err());
    }

    #[test]
    fn rate_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let a = mutation_rate(i as f64 / 100.0, 0.2).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(mutation_sigma(1.0, 4, 5).unwrap(), 1.0);
        assert!((mutation_sigma(0.4, 0, 4).unwrap() - 0.1).abs() < 1e-15);
        assert!((mutation_sigma(0.4, 2, 4).unwrap() - 0.3).abs() < 1e-15);
        assert!(mutation_sigma(0.4, 4, 4).is_err());
    }

    #[test]
    fn perturb_clamps_and_zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb(0.37, 0.0, &mut rng), 0.37);
        for _ in 0..1000 {
            let v = perturb(0.99, 5.0, &mut rng);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn sequential_space_never_changes_connections() {
        let space = Arc::new(sequential_space());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let parent = random_genome(&space, 5, &mut rng).unwrap();
            let out = mutate_clone(&parent, 0.1, &MutationConfig::default(), &mut rng).unwrap();
            assert!(!out.connections_changed());
            assert_eq!(out.genome.depth(), 5);
            // connectivity genes are untouched in a sequential space
            for (a, b) in parent.nodes().iter().zip(out.genome.nodes()) {
                assert_eq!(a.indegree, b.indegree);
                assert_eq!(a.second_input, b.second_input);
            }
        }
    }

    #[test]
    fn perfect_parent_barely_moves() {
        // α = exp(-1/ρ) is tiny for ρ = 0.01, so no bin changes
        let space = Arc::new(sequential_space());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let parent = random_genome(&space, 4, &mut rng).unwrap();
        let cfg = MutationConfig {
            rho: 0.01,
            operation_sigma_scale: 1.0,
        };
        let out = mutate_clone(&parent, 1.0, &cfg, &mut rng).unwrap();
        assert_eq!(out.genome.discretize(), parent.discretize());
    }

    #[test]
    fn connection_change_precludes_node_changes() {
        let space = Arc::new(block_space());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut saw_connection = false;
        for _ in 0..1000 {
            let parent = random_genome(&space, 6, &mut rng).unwrap();
            let out = mutate_clone(&parent, 0.3, &MutationConfig::default(), &mut rng).unwrap();
            if out.connections_changed() {
                saw_connection = true;
                for (a, b) in parent.nodes().iter().zip(out.genome.nodes()) {
                    assert_eq!(a.aggregation, b.aggregation);
                    assert_eq!(a.operation, b.operation);
                    assert_eq!(a.hyperparams, b.hyperparams);
                }
            }
            assert!(out.genome.flat_genes().iter().all(|g| (0.0..=1.0).contains(g)));
        }
        assert!(saw_connection);
    }

    #[test]
    fn unique_clones_avoid_registry() {
        let space = Arc::new(sequential_space());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parent = random_genome(&space, 3, &mut rng).unwrap();
        let mut registry = EncodingRegistry::new();
        registry.insert(&parent.encoding());
        let clones = clone_and_mutate_unique(
            &parent,
            0.0,
            3,
            &mut registry,
            &MutationConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(clones.len(), 3);
        let encs: HashSet<String> = clones.iter().map(|c| c.genome.encoding()).collect();
        assert_eq!(encs.len(), 3);
        assert!(!encs.contains(&parent.encoding()));
    }

    #[test]
    fn exhausted_space_yields_no_clones() {
        let op = OperationSpec::new("Conv", vec![("k", vec![crate::space::ParamValue::Int(1)])]);
        let id = OperationSpec::new("Identity", vec![]);
        let space = Arc::new(SearchSpace::new("tiny", vec![op, id], false, 1, vec![], false).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let parent = random_genome(&space, 1, &mut rng).unwrap();
        let mut registry = EncodingRegistry::new();
        registry.insert("in=-|agg=-|op=Conv|h=1");
        registry.insert("in=-|agg=-|op=Identity|h=");
        let clones = clone_and_mutate_unique(
            &parent,
            0.0,
            4,
            &mut registry,
            &MutationConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(clones.is_empty());
    }
}
