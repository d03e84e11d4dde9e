//! Assumption checks: locality of the mutation operator, partial versus full
//! training, and whether a deeper copy of a good network stays good.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{FullTrainConfig, TrainConfig};
use crate::error::Error;
use crate::evaluator::{EvalRequest, Evaluator, NeuralEvaluator, ParentLink};
use crate::genome::{random_genome, ArchitectureGenome, NodeGene};
use crate::mutation::{mutate_clone, MutationConfig};
use crate::rng::{self, tags};
use crate::space::{SearchSpace, IDENTITY};
use crate::stats::{self, spearman, Alternative, Correlation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub label: String,
    #[serde(flatten)]
    pub correlation: Correlation,
}

impl CorrelationReport {
    fn compute(label: String, x: &[f64], y: &[f64], alternative: Alternative) -> Result<Self, Error> {
        Ok(Self {
            label,
            correlation: spearman(x, y, alternative)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityPair {
    pub depth: usize,
    pub parent: f64,
    pub clone_mean: f64,
    pub clone_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityGroup {
    pub depth: usize,
    pub mean: CorrelationReport,
    pub std: CorrelationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub groups: Vec<LocalityGroup>,
    pub pairs: Vec<LocalityPair>,
}

fn evaluate(
    evaluator: &mut dyn Evaluator,
    genome: &ArchitectureGenome,
    parent: Option<ParentLink<'_>>,
    data_seed: u64,
) -> (f64, Option<u64>) {
    let request = EvalRequest {
        genome,
        parent,
        data_seed,
    };
    match evaluator.evaluate(&request) {
        Ok(e) => (e.affinity, e.weights),
        Err(err) => {
            log::warn!("evaluation of {} failed: {err}", genome.encoding());
            (0.0, None)
        }
    }
}

fn link(genome: &ArchitectureGenome, weights: Option<u64>) -> Option<ParentLink<'_>> {
    weights.map(|w| ParentLink {
        genome,
        weights: w,
    })
}

/// For each depth, scores `parents` random genomes and `clones` mutated
/// clones of each, then correlates parent affinity with the mean and the
/// standard deviation of its clones' affinities.
#[allow(clippy::too_many_arguments)]
pub fn locality_experiment(
    space: &Arc<SearchSpace>,
    evaluator: &mut dyn Evaluator,
    parents: usize,
    clones: usize,
    depths: &[usize],
    mutation: &MutationConfig,
    alternative: Alternative,
    seed: u64,
) -> Result<LocalityReport, Error> {
    evaluator.check_space(space)?;
    let data_seed = rng::derive_seed(seed, &[tags::DATA]);
    let mut groups = Vec::new();
    let mut pairs = Vec::new();
    for &depth in depths {
        let mut rng = rng::stream(seed, &[tags::EXPERIMENT, rng::hash_str("locality"), depth as u64]);
        let mut group = Vec::with_capacity(parents);
        for _ in 0..parents {
            let parent = random_genome(space, depth, &mut rng)?;
            let (f, weights) = evaluate(evaluator, &parent, None, data_seed);
            let mut scores = Vec::with_capacity(clones);
            for _ in 0..clones {
                let clone = mutate_clone(&parent, f, mutation, &mut rng)?;
                scores.push(evaluate(evaluator, &clone.genome, link(&parent, weights), data_seed).0);
            }
            let pair = LocalityPair {
                depth,
                parent: f,
                clone_mean: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
                clone_std: stats::std_dev(&scores),
            };
            group.push(pair);
        }
        let x: Vec<f64> = group.iter().map(|p| p.parent).collect();
        let m: Vec<f64> = group.iter().map(|p| p.clone_mean).collect();
        let s: Vec<f64> = group.iter().map(|p| p.clone_std).collect();
        groups.push(LocalityGroup {
            depth,
            mean: CorrelationReport::compute(format!("depth {depth}: parent vs clone mean"), &x, &m, alternative)?,
            std: CorrelationReport::compute(format!("depth {depth}: parent vs clone std"), &x, &s, alternative)?,
        });
        pairs.extend(group);
    }
    Ok(LocalityReport { groups, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialPair {
    pub depth: usize,
    pub partial: f64,
    pub full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEvalReport {
    pub overall: CorrelationReport,
    pub groups: Vec<CorrelationReport>,
    pub pairs: Vec<PartialPair>,
}

/// Partially evaluates random genomes, continues training each from its
/// best partial weights, and correlates partial affinity with the test
/// accuracy after full training. `genomes` are split evenly over `depths`.
/// With zero full-training epochs the partial score stands as the final one.
#[allow(clippy::too_many_arguments)]
pub fn partial_eval_experiment(
    space: &Arc<SearchSpace>,
    neural: &mut NeuralEvaluator,
    genomes: usize,
    depths: &[usize],
    partial: &TrainConfig,
    full: &FullTrainConfig,
    alternative: Alternative,
    seed: u64,
) -> Result<PartialEvalReport, Error> {
    neural.check_space(space)?;
    if depths.is_empty() {
        return Err(Error::Argument("need at least one depth".into()));
    }
    let data_seed = rng::derive_seed(seed, &[tags::DATA]);
    let split_seed = rng::derive_seed(seed, &[tags::DATA, rng::hash_str("full")]);
    let per_group = genomes.div_ceil(depths.len());
    let mut pairs = Vec::new();
    let mut groups = Vec::new();
    for &depth in depths {
        let mut rng = rng::stream(seed, &[tags::EXPERIMENT, rng::hash_str("partial"), depth as u64]);
        let mut group = Vec::new();
        for _ in 0..per_group {
            let genome = random_genome(space, depth, &mut rng)?;
            let pair = match neural.train_partial_with(&genome, None, data_seed, partial) {
                Ok(outcome) if full.epochs == 0 => PartialPair {
                    depth,
                    partial: outcome.affinity,
                    full: outcome.affinity,
                },
                Ok(outcome) => {
                    let handle = neural.insert(outcome.network);
                    let (_, report) = neural.full_train(handle, full, split_seed)?;
                    PartialPair {
                        depth,
                        partial: outcome.affinity,
                        full: report.test_accuracy,
                    }
                }
                Err(err) => {
                    log::warn!("partial training of {} failed: {err}", genome.encoding());
                    PartialPair {
                        depth,
                        partial: 0.0,
                        full: 0.0,
                    }
                }
            };
            group.push(pair);
        }
        let x: Vec<f64> = group.iter().map(|p| p.partial).collect();
        let y: Vec<f64> = group.iter().map(|p| p.full).collect();
        groups.push(CorrelationReport::compute(format!("depth {depth}"), &x, &y, alternative)?);
        pairs.extend(group);
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.partial).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.full).collect();
    Ok(PartialEvalReport {
        overall: CorrelationReport::compute("overall".into(), &x, &y, alternative)?,
        groups,
        pairs,
    })
}

/// How the progressive experiment grows each genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppendMode {
    Random,
    /// Appends an Identity layer, which leaves the function unchanged.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressivePair {
    pub depth: usize,
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveGroup {
    pub correlation: CorrelationReport,
    pub median_delta: Option<f64>,
    pub mean_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveReport {
    pub overall: CorrelationReport,
    pub groups: Vec<ProgressiveGroup>,
    pub pairs: Vec<ProgressivePair>,
}

fn identity_node(space: &SearchSpace) -> Result<NodeGene, Error> {
    let k = space.operations().len();
    let idx = space
        .operations()
        .iter()
        .position(|o| o.name == IDENTITY)
        .ok_or_else(|| Error::Argument("space has no Identity operation".into()))?;
    Ok(NodeGene {
        indegree: 0.0,
        second_input: 0.0,
        aggregation: 0.0,
        operation: (idx as f64 + 0.5) / k as f64,
        hyperparams: Vec::new(),
    })
}

/// Scores random genomes, appends one layer to each (inheriting weights for
/// the unchanged prefix) and correlates affinity before and after.
#[allow(clippy::too_many_arguments)]
pub fn progressive_experiment(
    space: &Arc<SearchSpace>,
    evaluator: &mut dyn Evaluator,
    genomes: usize,
    depths: &[usize],
    mode: AppendMode,
    alternative: Alternative,
    seed: u64,
) -> Result<ProgressiveReport, Error> {
    evaluator.check_space(space)?;
    if depths.is_empty() {
        return Err(Error::Argument("need at least one depth".into()));
    }
    let data_seed = rng::derive_seed(seed, &[tags::DATA]);
    let per_group = genomes.div_ceil(depths.len());
    let mut pairs = Vec::new();
    let mut groups = Vec::new();
    for &depth in depths {
        let mut rng = rng::stream(seed, &[tags::EXPERIMENT, rng::hash_str("progressive"), depth as u64]);
        let mut group = Vec::new();
        for _ in 0..per_group {
            let genome = random_genome(space, depth, &mut rng)?;
            let (pre, weights) = evaluate(evaluator, &genome, None, data_seed);
            let node = match mode {
                AppendMode::Random => NodeGene::random(space, &mut rng),
                AppendMode::Identity => identity_node(space)?,
            };
            let grown = genome.with_appended(node)?;
            let (post, _) = evaluate(evaluator, &grown, link(&genome, weights), data_seed);
            group.push(ProgressivePair { depth, pre, post });
        }
        let x: Vec<f64> = group.iter().map(|p| p.pre).collect();
        let y: Vec<f64> = group.iter().map(|p| p.post).collect();
        let deltas: Vec<f64> = group.iter().map(|p| p.post - p.pre).collect();
        groups.push(ProgressiveGroup {
            correlation: CorrelationReport::compute(format!("depth {depth}"), &x, &y, alternative)?,
            median_delta: stats::median(&deltas),
            mean_delta: (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
        });
        pairs.extend(group);
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.pre).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.post).collect();
    Ok(ProgressiveReport {
        overall: CorrelationReport::compute("overall".into(), &x, &y, alternative)?,
        groups,
        pairs,
    })
}
