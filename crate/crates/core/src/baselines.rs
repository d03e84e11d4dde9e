//! Random search and a crossover-free genetic algorithm, run under the same
//! evaluation session (cache, deduplication, weight inheritance, budget) as
//! the clonal-selection search.

use std::sync::Arc;

use rand::Rng;

use crate::config::SearchConfig;
use crate::error::Error;
use crate::evaluator::Evaluator;
use crate::genome::ArchitectureGenome;
use crate::mutation::MAX_UNIQUE_ATTEMPTS;
use crate::rng::{self, tags};
use crate::search::{
    random_unique, rank_order, select_n_best, EvalSession, GenerationStats, Individual, Lineage,
    SearchOutcome,
};
use crate::space::SearchSpace;

/// Evaluations a full AIS run would spend if it never stopped early.
pub fn nominal_budget(cfg: &SearchConfig) -> usize {
    cfg.population * (1 + cfg.augment_copies)
        + cfg.max_generations * (cfg.population * cfg.clones_per_parent + cfg.insertions)
}

fn check_args(depth_range: (usize, usize), budget: usize, n: usize) -> Result<(), Error> {
    if depth_range.0 < 1 || depth_range.0 > depth_range.1 {
        return Err(Error::Argument(format!("empty depth range {depth_range:?}")));
    }
    if n < 2 || budget < n {
        return Err(Error::Argument(format!(
            "budget {budget} must cover a population of {n} (at least 2)"
        )));
    }
    Ok(())
}

fn finish(session: EvalSession<'_>, population: Vec<Individual>, trace: Vec<GenerationStats>) -> SearchOutcome {
    SearchOutcome {
        population,
        trace,
        events: Vec::new(),
        mutations: Vec::new(),
        evaluated: session.evaluated().to_vec(),
        evaluations: session.evaluations(),
        failures: session.failures(),
    }
}

/// Samples genomes with uniform depth and genes until `budget` evaluations
/// are spent; the population is the best `n`.
pub fn random_search(
    space: &Arc<SearchSpace>,
    depth_range: (usize, usize),
    budget: usize,
    n: usize,
    evaluator: &mut dyn Evaluator,
    seed: u64,
) -> Result<SearchOutcome, Error> {
    check_args(depth_range, budget, n)?;
    evaluator.check_space(space)?;
    let mut session = EvalSession::new(evaluator, Some(budget));
    let mut rng = rng::stream(seed, &[tags::BASELINE, rng::hash_str("random")]);
    let data_seed = rng::derive_seed(seed, &[tags::DATA, 0]);
    let mut sampled: Vec<Individual> = Vec::with_capacity(budget);
    let mut trace = Vec::new();
    let mut attempts = 0;
    while !session.exhausted() && attempts < budget * MAX_UNIQUE_ATTEMPTS {
        attempts += 1;
        let depth = rng.random_range(depth_range.0..=depth_range.1);
        let genome = random_unique(space, depth, &mut session.registry, &mut rng)?;
        let before = session.evaluations();
        let Some(ind) = session.evaluate(genome, None, data_seed, 0, Lineage::Random) else {
            break;
        };
        if session.evaluations() == before {
            continue;
        }
        sampled.push(ind);
        if sampled.len() % n == 0 {
            let best = select_n_best(sampled.clone(), n);
            trace.push(GenerationStats::of(trace.len(), &best, session.evaluations()));
        }
    }
    let population = select_n_best(sampled, n);
    if trace.last().is_none_or(|t| t.evaluations_so_far != session.evaluations()) {
        trace.push(GenerationStats::of(trace.len(), &population, session.evaluations()));
    }
    Ok(finish(session, population, trace))
}

/// Genes a GA mutation may touch in one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gene {
    Indegree,
    SecondInput,
    Aggregation,
    Operation,
    Hyper(usize),
}

/// Resamples one uniformly chosen gene of one uniformly chosen node. A new
/// operation brings freshly sampled hyperparameter genes.
pub fn ga_mutate<R: Rng + ?Sized>(genome: &ArchitectureGenome, rng: &mut R) -> ArchitectureGenome {
    let mut child = genome.clone();
    let i = rng.random_range(0..genome.depth());
    let mut genes = Vec::new();
    if genome.space().allows_skip_connections() && i > 0 {
        genes.push(Gene::Indegree);
        if genome.indegree(i) == 2 {
            genes.extend([Gene::SecondInput, Gene::Aggregation]);
        }
    }
    genes.push(Gene::Operation);
    genes.extend((0..genome.nodes()[i].hyperparams.len()).map(Gene::Hyper));
    let gene = genes[rng.random_range(0..genes.len())];
    let op_before = genome.operation_index(i);
    let value: f64 = rng.random();
    let node = &mut child.nodes_mut()[i];
    match gene {
        Gene::Indegree => node.indegree = value,
        Gene::SecondInput => node.second_input = value,
        Gene::Aggregation => node.aggregation = value,
        Gene::Operation => node.operation = value,
        Gene::Hyper(j) => node.hyperparams[j] = value,
    }
    if child.operation_index(i) != op_before {
        let count = child.operation(i).hyperparams.len();
        child.nodes_mut()[i].hyperparams = (0..count).map(|_| rng.random()).collect();
    }
    child
}

/// True when `a` beats `b` in a pairwise tournament.
pub fn tournament(a: &Individual, b: &Individual) -> bool {
    rank_order(a, b).is_le()
}

/// Steady-state GA: a pairwise tournament picks a parent, its mutated clone
/// replaces a uniformly chosen individual. Runs until `budget` evaluations.
pub fn ga_search(
    space: &Arc<SearchSpace>,
    depth_range: (usize, usize),
    budget: usize,
    n: usize,
    evaluator: &mut dyn Evaluator,
    seed: u64,
) -> Result<SearchOutcome, Error> {
    check_args(depth_range, budget, n)?;
    evaluator.check_space(space)?;
    let mut session = EvalSession::new(evaluator, Some(budget));
    let mut rng = rng::stream(seed, &[tags::BASELINE, rng::hash_str("ga")]);
    let data_seed = |g: usize| rng::derive_seed(seed, &[tags::DATA, g as u64]);
    let mut pop = Vec::with_capacity(n);
    while pop.len() < n {
        let depth = rng.random_range(depth_range.0..=depth_range.1);
        let genome = random_unique(space, depth, &mut session.registry, &mut rng)?;
        match session.evaluate(genome, None, data_seed(0), 0, Lineage::Random) {
            Some(ind) => pop.push(ind),
            None => break,
        }
    }
    let mut trace = vec![GenerationStats::of(0, &pop, session.evaluations())];
    let mut stalls = 0;
    while !session.exhausted() && stalls < budget * MAX_UNIQUE_ATTEMPTS {
        let generation = trace.len();
        let a = rng.random_range(0..pop.len());
        let mut b = rng.random_range(0..pop.len() - 1);
        if b >= a {
            b += 1;
        }
        let winner = if tournament(&pop[a], &pop[b]) { a } else { b };
        let parent = &pop[winner];
        let mut child = None;
        for _ in 0..MAX_UNIQUE_ATTEMPTS {
            let candidate = ga_mutate(&parent.genome, &mut rng);
            if session.registry.insert(&candidate.encoding()) {
                child = Some(candidate);
                break;
            }
        }
        let victim = rng.random_range(0..pop.len());
        let Some(child) = child else {
            stalls += 1;
            continue;
        };
        let before = session.evaluations();
        let lineage = Lineage::Clone(parent.encoding.clone());
        let parent_link = Some((&parent.genome, parent.weights));
        let Some(ind) = session.evaluate(child, parent_link, data_seed(generation), generation, lineage)
        else {
            break;
        };
        pop[victim] = ind;
        if session.evaluations() > before && (session.evaluations() - n) % n == 0 {
            trace.push(GenerationStats::of(generation, &pop, session.evaluations()));
        }
    }
    if trace.last().is_none_or(|t| t.evaluations_so_far != session.evaluations()) {
        let generation = trace.len();
        trace.push(GenerationStats::of(generation, &pop, session.evaluations()));
    }
    let population = select_n_best(pop, n);
    Ok(finish(session, population, trace))
}
