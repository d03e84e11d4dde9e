//! Clonal-selection neural architecture search.
//!
//! Genomes are ordered lists of continuous genes that bin into DAG
//! architectures. A population is cloned with affinity-scaled mutation,
//! grown one layer at a time when progress stalls, and finally combined into
//! an affinity-weighted committee.

pub mod baselines;
pub mod committee;
pub mod config;
pub mod dataset;
mod error;
pub mod evaluator;
pub mod experiments;
pub mod genome;
pub mod io;
pub mod pipeline;
pub mod mutation;
pub mod rng;
pub mod search;
pub mod space;
pub mod stats;
pub mod strategy;

pub use error::{DataError, Error, EvalError, GenomeError, StatsError};
pub use genome::{ArchitectureGenome, DiscreteArchitecture, DiscreteLayer, NodeGene};
pub use space::{Aggregation, OperationSpec, ParamValue, SearchSpace};
