//! Deterministic multimodal affinity landscape over genomes.
//!
//! Each genome is summarized by the mean of its per-node gene vectors, so the
//! landscape is defined for every depth. Affinity is a sum of Gaussian bumps
//! at that point, scaled by a depth response peaking at an optimal depth, and
//! clamped to [0, 1].

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EvalRequest, Evaluation, Evaluator};
use crate::error::EvalError;
use crate::genome::ArchitectureGenome;
use crate::rng;
use crate::space::SearchSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub peaks: usize,
    pub peak_width: f64,
    pub peak_height_min: f64,
    pub peak_height_max: f64,
    /// Standard deviation of peak centers around the middle of gene space.
    pub peak_spread: f64,
    pub background_width: f64,
    pub background_height: f64,
    pub optimal_depth: f64,
    pub slope_below: f64,
    pub slope_above: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            peaks: 5,
            peak_width: 0.08,
            peak_height_min: 0.25,
            peak_height_max: 0.4,
            peak_spread: 0.15,
            background_width: 0.25,
            background_height: 0.6,
            optimal_depth: 6.0,
            slope_below: 0.05,
            slope_above: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

impl Bump {
    pub fn response(&self, point: &[f64]) -> f64 {
        self.height * (-squared_distance(&self.center, point) / (2.0 * self.width * self.width)).exp()
    }

    /// Largest gradient norm of the response.
    fn max_slope(&self) -> f64 {
        self.height / (self.width * std::f64::consts::E.sqrt())
    }
}

/// Multiplicative penalty for depths away from the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub optimal_depth: f64,
    pub slope_below: f64,
    pub slope_above: f64,
}

impl DepthResponse {
    pub fn at(&self, depth: usize) -> f64 {
        let d = depth as f64;
        if d <= self.optimal_depth {
            (-self.slope_below * (self.optimal_depth - d)).exp()
        } else {
            (-self.slope_above * (d - self.optimal_depth)).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLandscape {
    skip: bool,
    hyperparams: usize,
    background: Option<Bump>,
    peaks: Vec<Bump>,
    depth: DepthResponse,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Length of the per-node feature vector for a space.
pub fn feature_dim(space: &SearchSpace) -> usize {
    let connectivity = if space.allows_skip_connections() { 3 } else { 0 };
    connectivity + 1 + space.max_hyperparams()
}

impl SurrogateLandscape {
    pub fn generate(space: &SearchSpace, cfg: &SurrogateConfig, seed: u64) -> Self {
        let dim = feature_dim(space);
        let mut rng = rng::stream(seed, &[rng::hash_str("surrogate"), rng::hash_str(space.name())]);
        let spread = Normal::new(0.0, cfg.peak_spread.max(0.0)).expect("finite spread");
        let peaks = (0..cfg.peaks)
            .map(|_| Bump {
                center: (0..dim)
                    .map(|_| (0.5 + spread.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect(),
                width: cfg.peak_width,
                height: if cfg.peak_height_max > cfg.peak_height_min {
                    rng.random_range(cfg.peak_height_min..cfg.peak_height_max)
                } else {
                    cfg.peak_height_min
                },
            })
            .collect();
        let background = (cfg.background_height > 0.0).then(|| Bump {
            center: vec![0.5; dim],
            width: cfg.background_width,
            height: cfg.background_height,
        });
        Self {
            skip: space.allows_skip_connections(),
            hyperparams: space.max_hyperparams(),
            background,
            peaks,
            depth: DepthResponse {
                optimal_depth: cfg.optimal_depth,
                slope_below: cfg.slope_below,
                slope_above: cfg.slope_above,
            },
        }
    }

    /// A landscape with explicitly given bumps over `space`.
    pub fn from_parts(
        space: &SearchSpace,
        background: Option<Bump>,
        peaks: Vec<Bump>,
        depth: DepthResponse,
    ) -> Self {
        Self {
            skip: space.allows_skip_connections(),
            hyperparams: space.max_hyperparams(),
            background,
            peaks,
            depth,
        }
    }

    pub fn peaks(&self) -> &[Bump] {
        &self.peaks
    }

    pub fn depth_response(&self) -> &DepthResponse {
        &self.depth
    }

    /// Mean per-node feature vector. Missing hyperparameter genes count as 0.5.
    pub fn features(&self, genome: &ArchitectureGenome) -> Vec<f64> {
        let dim = usize::from(self.skip) * 3 + 1 + self.hyperparams;
        let mut acc = vec![0.0; dim];
        for node in genome.nodes() {
            let mut k = 0;
            if self.skip {
                for g in [node.indegree, node.second_input, node.aggregation] {
                    acc[k] += g;
                    k += 1;
                }
            }
            acc[k] += node.operation;
            k += 1;
            for j in 0..self.hyperparams {
                acc[k + j] += node.hyperparams.get(j).copied().unwrap_or(0.5);
            }
        }
        let n = genome.depth() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        acc
    }

    pub fn affinity(&self, genome: &ArchitectureGenome) -> f64 {
        let point = self.features(genome);
        let raw: f64 = self
            .background
            .iter()
            .chain(&self.peaks)
            .map(|b| b.response(&point))
            .sum();
        (self.depth.at(genome.depth()) * raw).clamp(0.0, 1.0)
    }

    /// Upper bound on |f(a) − f(b)| / ‖genes(a) − genes(b)‖ for genomes of
    /// `depth` nodes whose nodes carry the same number of hyperparameter genes.
    pub fn lipschitz_bound(&self, depth: usize) -> f64 {
        let slope: f64 = self.background.iter().chain(&self.peaks).map(Bump::max_slope).sum();
        self.depth.at(depth) * slope / (depth.max(1) as f64).sqrt()
    }

    /// Number of peaks whose nearest genome lies within one bump width.
    pub fn coverage<'a, I>(&self, genomes: I) -> usize
    where
        I: IntoIterator<Item = &'a ArchitectureGenome>,
    {
        let points: Vec<Vec<f64>> = genomes.into_iter().map(|g| self.features(g)).collect();
        self.peaks
            .iter()
            .filter(|peak| {
                points
                    .iter()
                    .map(|p| squared_distance(p, &peak.center))
                    .fold(f64::INFINITY, f64::min)
                    <= peak.width * peak.width
            })
            .count()
    }
}

pub struct SurrogateEvaluator {
    landscape: Arc<SurrogateLandscape>,
}

impl SurrogateEvaluator {
    pub fn new(landscape: SurrogateLandscape) -> Self {
        Self {
            landscape: Arc::new(landscape),
        }
    }

    pub fn landscape(&self) -> &Arc<SurrogateLandscape> {
        &self.landscape
    }
}

impl Evaluator for SurrogateEvaluator {
    fn name(&self) -> &'static str {
        "surrogate"
    }

    fn check_space(&self, _space: &SearchSpace) -> Result<(), EvalError> {
        Ok(())
    }

    fn evaluate(&mut self, request: &EvalRequest<'_>) -> Result<Evaluation, EvalError> {
        Ok(Evaluation {
            affinity: self.landscape.affinity(request.genome),
            weights: None,
            epochs: 0,
        })
    }

    fn run_metrics(&self, population: &[&ArchitectureGenome]) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("coverage".into(), self.landscape.coverage(population.iter().copied()).into());
        m.insert("peaks".into(), self.landscape.peaks().len().into());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{random_genome, NodeGene};
    use crate::space::{block_space, sequential_space};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn genome_at_single_bump_center_scores_its_height() {
        let space = Arc::new(sequential_space());
        // Identity at gene 0.9 with padded hyperparameters at 0.5
        let center = vec![0.9, 0.5, 0.5, 0.5];
        let landscape = SurrogateLandscape::from_parts(
            &space,
            None,
            vec![Bump {
                center,
                width: 0.1,
                height: 0.8,
            }],
            DepthResponse {
                optimal_depth: 4.0,
                slope_below: 0.1,
                slope_above: 0.1,
            },
        );
        let node = NodeGene {
            indegree: 0.0,
            second_input: 0.0,
            aggregation: 0.0,
            operation: 0.9,
            hyperparams: vec![],
        };
        let g = ArchitectureGenome::new(space, vec![node; 4]).unwrap();
        assert!((landscape.affinity(&g) - 0.8).abs() < 1e-15);
        assert_eq!(landscape.coverage([&g]), 1);
    }

    #[test]
    fn deterministic_and_bounded() {
        let space = Arc::new(block_space());
        let a = SurrogateLandscape::generate(&space, &SurrogateConfig::default(), 11);
        let b = SurrogateLandscape::generate(&space, &SurrogateConfig::default(), 11);
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 1..12 {
            let g = random_genome(&space, d, &mut rng).unwrap();
            let f = a.affinity(&g);
            assert!((0.0..=1.0).contains(&f));
            assert_eq!(f.to_bits(), b.affinity(&g).to_bits());
        }
    }

    #[test]
    fn depth_response_peaks_at_optimum() {
        let r = DepthResponse {
            optimal_depth: 6.0,
            slope_below: 0.05,
            slope_above: 0.02,
        };
        assert_eq!(r.at(6), 1.0);
        assert!(r.at(3) < r.at(4));
        assert!(r.at(9) < r.at(7));
    }
}
