//! Continuous-encoded DAG genomes and their discretization.
//!
//! Every gene is a real in [0, 1]. A genome is only turned into a concrete
//! architecture by binning, so sub-bin perturbations are remembered without
//! changing what is expressed.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GenomeError;
use crate::space::{Aggregation, OperationSpec, ParamValue, SearchSpace};

/// Bin index of `gene` among `k` equal-width bins: `min(floor(gene·k), k−1)`.
pub fn bin_index(gene: f64, k: usize) -> usize {
    debug_assert!(k > 0);
    ((gene * k as f64).floor().max(0.0) as usize).min(k - 1)
}

/// Maps a gene in [0, 1] to one of `choices`.
pub fn discretize<T>(gene: f64, choices: &[T]) -> Result<&T, GenomeError> {
    if choices.is_empty() {
        return Err(GenomeError::Config("cannot discretize over an empty choice list".into()));
    }
    Ok(&choices[bin_index(gene, choices.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub indegree: f64,
    /// Bins over the legal second-input range `0..position` (node v_0 is the input).
    pub second_input: f64,
    pub aggregation: f64,
    pub operation: f64,
    /// One gene per hyperparameter of the expressed operation.
    pub hyperparams: Vec<f64>,
}

impl NodeGene {
    pub fn random<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Self {
        let operation = rng.random::<f64>();
        let op = discretize(operation, space.operations()).expect("space has operations");
        Self {
            indegree: rng.random(),
            second_input: rng.random(),
            aggregation: rng.random(),
            operation,
            hyperparams: (0..op.hyperparams.len()).map(|_| rng.random()).collect(),
        }
    }

    fn genes(&self) -> impl Iterator<Item = f64> + '_ {
        [self.indegree, self.second_input, self.aggregation, self.operation]
            .into_iter()
            .chain(self.hyperparams.iter().copied())
    }
}

/// Hidden layers v_1..v_L. The input node and classifier head are implicit.
#[derive(Debug, Clone)]
pub struct ArchitectureGenome {
    space: Arc<SearchSpace>,
    nodes: Vec<NodeGene>,
}

impl PartialEq for ArchitectureGenome {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && (Arc::ptr_eq(&self.space, &other.space) || self.space == other.space)
    }
}

impl ArchitectureGenome {
    pub fn new(space: Arc<SearchSpace>, nodes: Vec<NodeGene>) -> Result<Self, GenomeError> {
        if nodes.is_empty() {
            return Err(GenomeError::Argument("a genome needs at least one node".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Some(g) = node.genes().find(|g| !(0.0..=1.0).contains(g)) {
                return Err(GenomeError::Argument(format!("node {i} has gene {g} outside [0, 1]")));
            }
            let op = discretize(node.operation, space.operations())?;
            if node.hyperparams.len() != op.hyperparams.len() {
                return Err(GenomeError::Argument(format!(
                    "node {i} expresses `{}` with {} hyperparameters but stores {} genes",
                    op.name,
                    op.hyperparams.len(),
                    node.hyperparams.len()
                )));
            }
        }
        Ok(Self { space, nodes })
    }

    pub fn space(&self) -> &Arc<SearchSpace> {
        &self.space
    }

    pub fn nodes(&self) -> &[NodeGene] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut Vec<NodeGene> {
        &mut self.nodes
    }

    /// Indegree of the node at zero-based `index`. v_1 always has one input.
    pub fn indegree(&self, index: usize) -> usize {
        if index == 0 || !self.space.allows_skip_connections() {
            1
        } else {
            1 + bin_index(self.nodes[index].indegree, self.space.max_indegree())
        }
    }

    /// Second input (an index into v_0..v_{l-2}) when the indegree is 2.
    pub fn second_input(&self, index: usize) -> Option<usize> {
        (self.indegree(index) == 2).then(|| bin_index(self.nodes[index].second_input, index))
    }

    pub fn aggregation(&self, index: usize) -> Option<Aggregation> {
        (self.indegree(index) == 2).then(|| {
            let aggs = self.space.aggregations();
            aggs[bin_index(self.nodes[index].aggregation, aggs.len())]
        })
    }

    pub fn operation_index(&self, index: usize) -> usize {
        bin_index(self.nodes[index].operation, self.space.operations().len())
    }

    pub fn operation(&self, index: usize) -> &OperationSpec {
        &self.space.operations()[self.operation_index(index)]
    }

    pub fn hyperparam_indices(&self, index: usize) -> Vec<usize> {
        let op = self.operation(index);
        self.nodes[index]
            .hyperparams
            .iter()
            .zip(&op.hyperparams)
            .map(|(&g, hp)| bin_index(g, hp.values.len()))
            .collect()
    }

    /// Resolved connections of a node: (indegree, second input).
    pub fn connection(&self, index: usize) -> (usize, Option<usize>) {
        (self.indegree(index), self.second_input(index))
    }

    pub fn discretize(&self) -> DiscreteArchitecture {
        let layers = (0..self.nodes.len())
            .map(|i| {
                let op = self.operation(i);
                DiscreteLayer {
                    operation: op.name.clone(),
                    hyperparams: self
                        .hyperparam_indices(i)
                        .into_iter()
                        .zip(&op.hyperparams)
                        .map(|(b, hp)| hp.values[b].clone())
                        .collect(),
                    second_input: self.second_input(i),
                    aggregation: self.aggregation(i),
                }
            })
            .collect();
        DiscreteArchitecture { layers }
    }

    pub fn encoding(&self) -> String {
        self.discretize().encode()
    }

    /// Copy of this genome with `node` appended as the new deepest layer.
    pub fn with_appended(&self, node: NodeGene) -> Result<Self, GenomeError> {
        let mut nodes = self.nodes.clone();
        nodes.push(node);
        Self::new(self.space.clone(), nodes)
    }

    /// All genes, node by node, in declaration order.
    pub fn flat_genes(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(NodeGene::genes).collect()
    }
}

/// Samples a genome of `depth` nodes with every gene uniform on [0, 1].
pub fn random_genome<R: Rng + ?Sized>(
    space: &Arc<SearchSpace>,
    depth: usize,
    rng: &mut R,
) -> Result<ArchitectureGenome, GenomeError> {
    if depth < 1 {
        return Err(GenomeError::Argument("genome depth must be at least 1".into()));
    }
    let nodes = (0..depth).map(|_| NodeGene::random(space, rng)).collect();
    ArchitectureGenome::new(space.clone(), nodes)
}

/// Mean node count, rounded half up, at least 1.
pub fn average_depth<'a, I>(genomes: I) -> Result<usize, GenomeError>
where
    I: IntoIterator<Item = &'a ArchitectureGenome>,
{
    let (sum, count) = genomes
        .into_iter()
        .fold((0usize, 0usize), |(s, c), g| (s + g.depth(), c + 1));
    if count == 0 {
        return Err(GenomeError::Argument("average depth of an empty population".into()));
    }
    Ok(((2 * sum + count) / (2 * count)).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLayer {
    pub operation: String,
    pub hyperparams: Vec<ParamValue>,
    /// `None` when the node has a single input (from the previous layer).
    pub second_input: Option<usize>,
    /// `None` exactly when the indegree is 1.
    pub aggregation: Option<Aggregation>,
}

impl DiscreteLayer {
    pub fn indegree(&self) -> usize {
        if self.second_input.is_some() {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteArchitecture {
    pub layers: Vec<DiscreteLayer>,
}

impl DiscreteArchitecture {
    /// Canonical string: layers joined by `;`, each rendered as
    /// `in=<k|->|agg=<A|C|->|op=<name>|h=<v1,v2,...>`.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            match layer.second_input {
                Some(k) => write!(out, "in={k}").expect("string write"),
                None => out.push_str("in=-"),
            }
            out.push_str("|agg=");
            out.push(layer.aggregation.map_or('-', Aggregation::code));
            write!(out, "|op={}|h=", layer.operation).expect("string write");
            for (j, v) in layer.hyperparams.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("string write");
            }
        }
        out
    }
}
