//! End-to-end runs: strategy plus evaluator into a run directory, and
//! committees built from trained populations.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::committee::{ensemble_metrics, Committee, EnsembleReport};
use crate::config::{CommitteeConfig, RetainPolicy, RunConfig, VoteWeights};
use crate::error::Error;
use crate::evaluator::{Evaluator, EvaluatorRegistry, NeuralEvaluator, StoredNetwork};
use crate::genome::ArchitectureGenome;
use crate::io::{self, Manifest, RunSummary};
use crate::rng::{self, tags};
use crate::search::{Individual, SearchOutcome};
use crate::space::SearchSpace;
use crate::strategy::{StrategyContext, StrategyRegistry};

pub struct RunResult {
    pub space: Arc<SearchSpace>,
    pub outcome: SearchOutcome,
    pub summary: RunSummary,
    pub evaluator: Box<dyn Evaluator>,
    pub elapsed_secs: f64,
}

/// Builds the named evaluator, runs the named strategy and summarises the
/// final population.
pub fn run(
    strategy: &str,
    evaluator: &str,
    space: &Arc<SearchSpace>,
    config: &RunConfig,
    seed: u64,
) -> Result<RunResult, Error> {
    config.validate()?;
    let strategies = StrategyRegistry::default();
    let strategy = strategies.get(strategy)?;
    let mut evaluator = EvaluatorRegistry::default().build(evaluator, config, space, seed)?;
    let start = Instant::now();
    let ctx = StrategyContext {
        space,
        config,
        seed,
    };
    let outcome = strategy.run(&ctx, evaluator.as_mut())?;
    let elapsed_secs = start.elapsed().as_secs_f64();
    let mut summary = RunSummary::new(strategy.name(), evaluator.name(), space.name(), seed, &outcome);
    let genomes: Vec<&ArchitectureGenome> = outcome.population.iter().map(|i| &i.genome).collect();
    summary.metrics = evaluator.run_metrics(&genomes);
    Ok(RunResult {
        space: space.clone(),
        outcome,
        summary,
        evaluator,
        elapsed_secs,
    })
}

/// Writes all artifacts of a finished run plus its manifest.
pub fn write(dir: &Path, result: &RunResult, command: &str, config: &RunConfig) -> Result<(), Error> {
    let config_json = serde_json::to_value(config).map_err(|e| Error::json(dir, e))?;
    let mut manifest = Manifest::new(command, result.summary.seed, config_json);
    manifest.elapsed_secs = result.elapsed_secs;
    manifest.timings.insert(
        "secs_per_evaluation".into(),
        (result.elapsed_secs / result.outcome.evaluations.max(1) as f64).into(),
    );
    manifest.timings.insert("search_secs".into(), result.elapsed_secs.into());
    let start = Instant::now();
    io::write_run(dir, &result.outcome, &result.summary, result.evaluator.as_ref())?;
    io::write_json(&dir.join(io::SPACE), &result.space.to_json())?;
    manifest.timings.insert("write_secs".into(), start.elapsed().as_secs_f64().into());
    io::write_json(&dir.join(io::MANIFEST), &manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub encoding: String,
    pub affinity: f64,
    pub vote_weight: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeReport {
    pub retain: RetainPolicy,
    pub vote_weights: VoteWeights,
    pub full_train: bool,
    pub members: Vec<MemberReport>,
    pub metrics: EnsembleReport,
}

/// Retains a committee from `population` (whose weights live in `neural`),
/// optionally continues training each member, and scores the weighted vote
/// on the test split.
pub fn committee_report(
    neural: &mut NeuralEvaluator,
    population: &[Individual],
    cfg: &CommitteeConfig,
    seed: u64,
) -> Result<CommitteeReport, Error> {
    let committee = Committee::build(population, cfg.retain)?;
    let full = neural.config().full.clone();
    let split_seed = rng::derive_seed(seed, &[tags::DATA, rng::hash_str("committee")]);
    let mut handles = Vec::with_capacity(committee.len());
    let mut val = Vec::with_capacity(committee.len());
    for member in committee.members() {
        let handle = member.weights.ok_or_else(|| {
            Error::Argument(format!("committee member {} has no trained weights", member.encoding))
        })?;
        if cfg.full_train {
            let (trained, report) = neural.full_train(handle, &full, split_seed)?;
            handles.push(trained);
            val.push(Some(report.val_accuracy));
        } else {
            handles.push(handle);
            val.push(None);
        }
    }
    let weights: Vec<f64> = match cfg.weights {
        VoteWeights::Affinity => committee.weights().to_vec(),
        VoteWeights::FullValidation => val
            .iter()
            .map(|v| v.map(|a| a.max(f64::MIN_POSITIVE)))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Argument("validation vote weights need full training".into()))?,
    };
    let test = neural.dataset().test.clone();
    let probs = handles
        .iter()
        .map(|&h| neural.predict(h, &test))
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = ensemble_metrics(&weights, &probs, &test.labels)?;
    let members = committee
        .members()
        .iter()
        .zip(&weights)
        .zip(&val)
        .zip(&metrics.member_accuracies)
        .map(|(((m, &w), &v), &t)| MemberReport {
            encoding: m.encoding.clone(),
            affinity: m.affinity,
            vote_weight: w,
            val_accuracy: v,
            test_accuracy: t,
        })
        .collect();
    Ok(CommitteeReport {
        retain: cfg.retain,
        vote_weights: cfg.weights,
        full_train: cfg.full_train,
        members,
        metrics,
    })
}

/// Loads a saved population with its weights into a fresh neural evaluator
/// and builds its committee report.
pub fn committee_from_dir(
    run_dir: &Path,
    space: &Arc<SearchSpace>,
    config: &RunConfig,
    seed: u64,
) -> Result<CommitteeReport, Error> {
    config.validate()?;
    let mut neural = NeuralEvaluator::from_config(&config.neural, seed)?;
    neural.check_space(space)?;
    let loaded = io::load_population(run_dir, space)?;
    let mut population = io::individuals(&loaded);
    for ((entry, _), ind) in loaded.iter().zip(population.iter_mut()) {
        if let Some(rel) = &entry.weights {
            let stored = StoredNetwork::load(&run_dir.join(rel))?;
            let expected = neural.decode(&ind.genome)?;
            if stored.spec != expected {
                return Err(Error::Argument(format!(
                    "weights of population entry {} do not match the configured network",
                    entry.rank
                )));
            }
            ind.weights = Some(neural.insert(stored));
        }
    }
    committee_report(&mut neural, &population, &config.committee, seed)
}

/// Writes the committee report and the per-member accuracy table.
pub fn write_committee(dir: &Path, report: &CommitteeReport) -> Result<(), Error> {
    io::create_dir(dir)?;
    io::write_json(&dir.join(io::COMMITTEE_REPORT), report)?;
    io::write_csv(&dir.join(io::MEMBERS_CSV), &report.members)
}
