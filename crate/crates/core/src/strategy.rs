//! Search algorithms behind one trait, registered by name.

use std::sync::Arc;

use crate::baselines::{ga_search, nominal_budget, random_search};
use crate::config::RunConfig;
use crate::error::Error;
use crate::evaluator::Evaluator;
use crate::search::{search, SearchOutcome};
use crate::space::SearchSpace;

pub struct StrategyContext<'a> {
    pub space: &'a Arc<SearchSpace>,
    pub config: &'a RunConfig,
    pub seed: u64,
}

impl StrategyContext<'_> {
    /// Evaluation budget for the baselines: explicit, else the AIS cap, else
    /// what an AIS run without early stopping would spend.
    pub fn baseline_budget(&self) -> usize {
        self.config
            .baseline
            .budget
            .or(self.config.search.max_evaluations)
            .unwrap_or_else(|| nominal_budget(&self.config.search))
    }

    fn depth_range(&self) -> (usize, usize) {
        (self.config.baseline.depth_min, self.config.baseline.depth_max)
    }
}

pub trait SearchStrategy {
    fn name(&self) -> &'static str;

    fn run(&self, ctx: &StrategyContext<'_>, evaluator: &mut dyn Evaluator) -> Result<SearchOutcome, Error>;
}

pub struct ClonalSelection;

impl SearchStrategy for ClonalSelection {
    fn name(&self) -> &'static str {
        "ais"
    }

    fn run(&self, ctx: &StrategyContext<'_>, evaluator: &mut dyn Evaluator) -> Result<SearchOutcome, Error> {
        search(&ctx.config.search, &ctx.config.mutation, ctx.space, evaluator, ctx.seed)
    }
}

pub struct RandomSearch;

impl SearchStrategy for RandomSearch {
    fn name(&self) -> &'static str {
        "random"
    }

    fn run(&self, ctx: &StrategyContext<'_>, evaluator: &mut dyn Evaluator) -> Result<SearchOutcome, Error> {
        random_search(
            ctx.space,
            ctx.depth_range(),
            ctx.baseline_budget(),
            ctx.config.search.population,
            evaluator,
            ctx.seed,
        )
    }
}

pub struct Genetic;

impl SearchStrategy for Genetic {
    fn name(&self) -> &'static str {
        "ga"
    }

    fn run(&self, ctx: &StrategyContext<'_>, evaluator: &mut dyn Evaluator) -> Result<SearchOutcome, Error> {
        ga_search(
            ctx.space,
            ctx.depth_range(),
            ctx.baseline_budget(),
            ctx.config.search.population,
            evaluator,
            ctx.seed,
        )
    }
}

pub struct StrategyRegistry {
    strategies: Vec<Box<dyn SearchStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: Vec::new(),
        }
    }

    /// Adds a strategy, replacing any registered under the same name.
    pub fn register(&mut self, strategy: Box<dyn SearchStrategy>) {
        self.strategies.retain(|s| s.name() != strategy.name());
        self.strategies.push(strategy);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.iter().map(|s| s.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn SearchStrategy, Error> {
        self.strategies
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::Unknown {
                kind: "strategy",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClonalSelection));
        r.register(Box::new(RandomSearch));
        r.register(Box::new(Genetic));
        r
    }
}
