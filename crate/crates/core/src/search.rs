//! The clonal-selection search loop.
//!
//! A generation clones and mutates every individual, keeps the best `N` of
//! parents and clones, then injects random genomes at the average depth.
//! When mean affinity stalls for `π` generations the population is augmented
//! with one-layer-deeper copies; `π` consecutive fruitless augmentation
//! phases end the run.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SearchConfig;
use crate::error::Error;
use crate::evaluator::{EvalRequest, Evaluator, ParentLink, WeightHandle};
use crate::genome::{average_depth, random_genome, ArchitectureGenome, NodeGene};
use crate::mutation::{
    clone_and_mutate_unique, EncodingRegistry, MutationConfig, MutationRecord, MAX_UNIQUE_ATTEMPTS,
};
use crate::rng::{self, tags};
use crate::space::SearchSpace;

/// Where an individual came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parent", rename_all = "snake_case")]
pub enum Lineage {
    Random,
    Augmented(String),
    Clone(String),
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub genome: ArchitectureGenome,
    pub encoding: String,
    pub affinity: f64,
    pub weights: Option<WeightHandle>,
    pub birth_generation: usize,
    pub lineage: Lineage,
}

impl Individual {
    pub fn depth(&self) -> usize {
        self.genome.depth()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub mean_affinity: f64,
    pub best_affinity: f64,
    pub population_depths: Vec<usize>,
    pub distinct_encodings: usize,
    pub evaluations_so_far: usize,
    /// Whether the population was augmented at the end of this generation.
    pub augmented: bool,
}

impl GenerationStats {
    pub fn of(generation: usize, pop: &[Individual], evaluations: usize) -> Self {
        let n = pop.len().max(1) as f64;
        Self {
            generation,
            mean_affinity: pop.iter().map(|i| i.affinity).sum::<f64>() / n,
            best_affinity: pop.iter().map(|i| i.affinity).fold(0.0, f64::max),
            population_depths: pop.iter().map(Individual::depth).collect(),
            distinct_encodings: pop.iter().map(|i| i.encoding.as_str()).collect::<BTreeSet<_>>().len(),
            evaluations_so_far: evaluations,
            augmented: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Selection,
    Insertion,
    Augmentation,
}

/// Population size after a step of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationEvent {
    pub generation: usize,
    pub stage: Stage,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitDecision {
    Continue,
    Augment,
    Stop,
}

/// Two-level patience rule over the per-generation mean affinities.
///
/// The reference is the best mean that beat the previous reference by more
/// than `tau`. Every generation without such an improvement adds to a stall
/// counter, which an augmentation resets. At `pi` stalled generations the
/// population is augmented, unless `pi` consecutive augmentation phases
/// (including the one now ending) produced no improvement, in which case the
/// search stops. `augmentation_marks` lists the generations after which an
/// augmentation took place.
pub fn exit_condition(
    trace: &[GenerationStats],
    augmentation_marks: &[usize],
    pi: usize,
    tau: f64,
) -> ExitDecision {
    let Some(first) = trace.first() else {
        return ExitDecision::Continue;
    };
    let mut reference = first.mean_affinity;
    let mut stall = 0;
    let mut in_phase = false;
    let mut phase_improved = false;
    let mut failed_phases = 0;
    let close_phase = |in_phase: bool, improved: bool, failed: usize| match (in_phase, improved) {
        (false, _) => failed,
        (true, true) => 0,
        (true, false) => failed + 1,
    };
    for (i, stats) in trace.iter().enumerate() {
        if i > 0 {
            if stats.mean_affinity > reference + tau {
                reference = stats.mean_affinity;
                stall = 0;
                phase_improved = true;
            } else {
                stall += 1;
            }
        }
        if i + 1 < trace.len() && augmentation_marks.contains(&stats.generation) {
            failed_phases = close_phase(in_phase, phase_improved, failed_phases);
            in_phase = true;
            phase_improved = false;
            stall = 0;
        }
    }
    if stall < pi {
        return ExitDecision::Continue;
    }
    if close_phase(in_phase, phase_improved, failed_phases) >= pi {
        ExitDecision::Stop
    } else {
        ExitDecision::Augment
    }
}

fn compare_genes(a: &ArchitectureGenome, b: &ArchitectureGenome) -> Ordering {
    a.flat_genes()
        .iter()
        .zip(b.flat_genes().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Ranking used for selection and committees: affinity descending, then
/// shallower, earlier-born and lexicographically smaller encodings first.
pub fn rank_order(a: &Individual, b: &Individual) -> Ordering {
    b.affinity
        .total_cmp(&a.affinity)
        .then(a.depth().cmp(&b.depth()))
        .then(a.birth_generation.cmp(&b.birth_generation))
        .then_with(|| a.encoding.cmp(&b.encoding))
        .then_with(|| compare_genes(&a.genome, &b.genome))
}

pub fn select_n_best(mut pool: Vec<Individual>, n: usize) -> Vec<Individual> {
    pool.sort_by(rank_order);
    pool.truncate(n);
    pool
}

/// A genome awaiting evaluation and the population index it descends from.
#[derive(Debug, Clone)]
pub struct Offspring {
    pub genome: ArchitectureGenome,
    pub parent: usize,
}

/// `n_a` copies of every individual, each with one random node appended.
/// Copies whose encoding is already known are redrawn up to the retry cap.
pub fn augment_population<R: Rng + ?Sized>(
    pop: &[Individual],
    n_a: usize,
    registry: &mut EncodingRegistry,
    rng: &mut R,
) -> Result<Vec<Offspring>, Error> {
    let mut out = Vec::with_capacity(pop.len() * n_a);
    for (idx, parent) in pop.iter().enumerate() {
        for _ in 0..n_a {
            let mut child = None;
            for _ in 0..MAX_UNIQUE_ATTEMPTS {
                let node = NodeGene::random(parent.genome.space(), rng);
                let candidate = parent.genome.with_appended(node)?;
                let fresh = registry.insert(&candidate.encoding());
                child = Some(candidate);
                if fresh {
                    break;
                }
            }
            out.push(Offspring {
                genome: child.expect("at least one attempt"),
                parent: idx,
            });
        }
    }
    Ok(out)
}

/// A random genome of `depth` nodes, redrawn while its encoding is known.
pub fn random_unique<R: Rng + ?Sized>(
    space: &Arc<SearchSpace>,
    depth: usize,
    registry: &mut EncodingRegistry,
    rng: &mut R,
) -> Result<ArchitectureGenome, Error> {
    let mut last = None;
    for _ in 0..MAX_UNIQUE_ATTEMPTS {
        let g = random_genome(space, depth, rng)?;
        let fresh = registry.insert(&g.encoding());
        last = Some(g);
        if fresh {
            break;
        }
    }
    Ok(last.expect("at least one attempt"))
}

/// Evaluation bookkeeping shared by all strategies: a per-run cache keyed by
/// encoding (no architecture is evaluated twice), the seen-encoding registry,
/// failure handling and the evaluation budget.
pub struct EvalSession<'e> {
    evaluator: &'e mut dyn Evaluator,
    cache: HashMap<String, (f64, Option<WeightHandle>)>,
    evaluated: Vec<String>,
    pub registry: EncodingRegistry,
    evaluations: usize,
    failures: usize,
    budget: Option<usize>,
}

impl<'e> EvalSession<'e> {
    pub fn new(evaluator: &'e mut dyn Evaluator, budget: Option<usize>) -> Self {
        Self {
            evaluator,
            cache: HashMap::new(),
            evaluated: Vec::new(),
            registry: EncodingRegistry::new(),
            evaluations: 0,
            failures: 0,
            budget,
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.evaluations >= b)
    }

    /// Evaluated encodings in evaluation order.
    pub fn evaluated(&self) -> &[String] {
        &self.evaluated
    }

    pub fn evaluator(&mut self) -> &mut dyn Evaluator {
        self.evaluator
    }

    /// Scores a genome, reusing the cache for known encodings. Returns `None`
    /// when the budget is spent. Evaluator errors score 0 and are logged.
    pub fn evaluate(
        &mut self,
        genome: ArchitectureGenome,
        parent: Option<(&ArchitectureGenome, Option<WeightHandle>)>,
        data_seed: u64,
        birth_generation: usize,
        lineage: Lineage,
    ) -> Option<Individual> {
        let encoding = genome.encoding();
        let (affinity, weights) = match self.cache.get(&encoding) {
            Some(&hit) => hit,
            None => {
                if self.exhausted() {
                    return None;
                }
                let link = parent.and_then(|(g, w)| {
                    w.map(|weights| ParentLink {
                        genome: g,
                        weights,
                    })
                });
                let request = EvalRequest {
                    genome: &genome,
                    parent: link,
                    data_seed,
                };
                self.evaluations += 1;
                let result = match self.evaluator.evaluate(&request) {
                    Ok(e) => (e.affinity.clamp(0.0, 1.0), e.weights),
                    Err(err) => {
                        self.failures += 1;
                        log::warn!("evaluation of {encoding} failed: {err}");
                        (0.0, None)
                    }
                };
                self.registry.insert(&encoding);
                self.cache.insert(encoding.clone(), result);
                self.evaluated.push(encoding.clone());
                result
            }
        };
        Some(Individual {
            genome,
            encoding,
            affinity,
            weights,
            birth_generation,
            lineage,
        })
    }
}

/// Everything a search run produces.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub population: Vec<Individual>,
    pub trace: Vec<GenerationStats>,
    pub events: Vec<PopulationEvent>,
    pub mutations: Vec<MutationRecord>,
    /// Encodings in evaluation order.
    pub evaluated: Vec<String>,
    pub evaluations: usize,
    pub failures: usize,
}

/// Runs the clonal-selection search.
pub fn search(
    cfg: &SearchConfig,
    mutation: &MutationConfig,
    space: &Arc<SearchSpace>,
    evaluator: &mut dyn Evaluator,
    seed: u64,
) -> Result<SearchOutcome, Error> {
    cfg.validate()?;
    mutation.validate()?;
    evaluator.check_space(space)?;
    let mut session = EvalSession::new(evaluator, cfg.max_evaluations);
    let mut events = Vec::new();
    let mut mutations = Vec::new();
    let data_seed = |g: usize| rng::derive_seed(seed, &[tags::DATA, g as u64]);

    let mut init_rng = rng::stream(seed, &[tags::INIT]);
    let mut pop = Vec::with_capacity(cfg.population * (1 + cfg.augment_copies));
    for _ in 0..cfg.population {
        let g = random_unique(space, cfg.initial_depth, &mut session.registry, &mut init_rng)?;
        if let Some(ind) = session.evaluate(g, None, data_seed(0), 0, Lineage::Random) {
            pop.push(ind);
        }
    }
    let mut aug_rng = rng::stream(seed, &[tags::AUGMENT, 0]);
    let copies = augment_population(&pop, cfg.augment_copies, &mut session.registry, &mut aug_rng)?;
    let augmented = evaluate_offspring(&mut session, &pop, copies, data_seed(0), 0, true);
    pop.extend(augmented);
    events.push(PopulationEvent {
        generation: 0,
        stage: Stage::Init,
        size: pop.len(),
    });
    let mut trace = vec![GenerationStats::of(0, &pop, session.evaluations())];
    let mut marks = Vec::new();

    for generation in 1..=cfg.max_generations {
        if session.exhausted() {
            break;
        }
        let ds = data_seed(generation);
        let mut clones = Vec::new();
        for (idx, parent) in pop.iter().enumerate() {
            let mut clone_rng = rng::stream(seed, &[tags::CLONE, generation as u64, idx as u64]);
            let outcomes = clone_and_mutate_unique(
                &parent.genome,
                parent.affinity,
                cfg.clones_per_parent,
                &mut session.registry,
                mutation,
                &mut clone_rng,
            )?;
            for outcome in outcomes {
                mutations.push(MutationRecord {
                    generation,
                    parent: parent.encoding.clone(),
                    clone: outcome.genome.encoding(),
                    alpha: outcome.alpha,
                    changes: outcome.changes,
                });
                clones.push(Offspring {
                    genome: outcome.genome,
                    parent: idx,
                });
            }
        }
        let evaluated = evaluate_offspring(&mut session, &pop, clones, ds, generation, false);
        pop.extend(evaluated);
        pop = select_n_best(pop, cfg.population);
        events.push(PopulationEvent {
            generation,
            stage: Stage::Selection,
            size: pop.len(),
        });
        trace.push(GenerationStats::of(generation, &pop, session.evaluations()));

        let depth = average_depth(pop.iter().map(|i| &i.genome))?;
        let mut insert_rng = rng::stream(seed, &[tags::INSERT, generation as u64]);
        for _ in 0..cfg.insertions {
            let g = random_unique(space, depth, &mut session.registry, &mut insert_rng)?;
            if let Some(ind) = session.evaluate(g, None, ds, generation, Lineage::Random) {
                pop.push(ind);
            }
        }
        events.push(PopulationEvent {
            generation,
            stage: Stage::Insertion,
            size: pop.len(),
        });
        trace.last_mut().expect("pushed above").evaluations_so_far = session.evaluations();

        match exit_condition(&trace, &marks, cfg.patience, cfg.tau) {
            ExitDecision::Continue => {}
            ExitDecision::Stop => break,
            ExitDecision::Augment => {
                let mut aug_rng = rng::stream(seed, &[tags::AUGMENT, generation as u64]);
                let copies =
                    augment_population(&pop, cfg.augment_copies, &mut session.registry, &mut aug_rng)?;
                let augmented = evaluate_offspring(&mut session, &pop, copies, ds, generation, true);
                pop.extend(augmented);
                events.push(PopulationEvent {
                    generation,
                    stage: Stage::Augmentation,
                    size: pop.len(),
                });
                marks.push(generation);
                let last = trace.last_mut().expect("pushed above");
                last.augmented = true;
                last.evaluations_so_far = session.evaluations();
            }
        }
    }

    Ok(SearchOutcome {
        population: select_n_best(pop, cfg.population),
        trace,
        events,
        mutations,
        evaluated: session.evaluated().to_vec(),
        evaluations: session.evaluations(),
        failures: session.failures(),
    })
}

fn evaluate_offspring(
    session: &mut EvalSession<'_>,
    pop: &[Individual],
    offspring: Vec<Offspring>,
    data_seed: u64,
    generation: usize,
    augmented: bool,
) -> Vec<Individual> {
    let mut out = Vec::with_capacity(offspring.len());
    for child in offspring {
        let parent = &pop[child.parent];
        let lineage = if augmented {
            Lineage::Augmented(parent.encoding.clone())
        } else {
            Lineage::Clone(parent.encoding.clone())
        };
        match session.evaluate(
            child.genome,
            Some((&parent.genome, parent.weights)),
            data_seed,
            generation,
            lineage,
        ) {
            Some(ind) => out.push(ind),
            None => break,
        }
    }
    out
}
