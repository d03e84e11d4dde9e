//! Partial training of decoded sequential networks.
//!
//! Candidates train on a seeded subset of the training pool with Adam and
//! cosine annealing, stop early once validation accuracy stalls, and keep the
//! weights of their best epoch. Children reuse every parent layer whose
//! configuration and channel counts are unchanged.

use std::path::Path;
use std::sync::Arc;

use immunecs_nn::{
    accuracy, predict_proba, train_epoch, Adam, CosineSchedule, LabeledData, LayerSpec, Network,
    NetworkSpec, NetworkState, PartialState, PoolKind,
};
use serde::{Deserialize, Serialize};

use super::weights::{StoredNetwork, WeightStore};
use super::{EvalRequest, Evaluation, Evaluator, WeightHandle};
use crate::config::{FullTrainConfig, NeuralConfig, TrainConfig};
use crate::dataset::{self, Dataset};
use crate::error::EvalError;
use crate::genome::{ArchitectureGenome, DiscreteLayer};
use crate::rng;
use crate::space::{ParamValue, SearchSpace, IDENTITY};

const EVAL_BATCH: usize = 256;
const NAME: &str = "neural";

/// Which parts of a child network take their parameters from the parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritPlan {
    pub stem: bool,
    pub nodes: Vec<bool>,
    pub head: bool,
}

impl InheritPlan {
    pub fn inherited_nodes(&self) -> usize {
        self.nodes.iter().filter(|&&b| b).count()
    }
}

/// A child layer inherits when the parent has a layer at the same position
/// with the same configuration and the same input and output channel counts.
/// The head inherits when the feature width is unchanged.
pub fn inherit_plan(parent: &NetworkSpec, child: &NetworkSpec) -> InheritPlan {
    let ps = parent.layer_shapes();
    let cs = child.layer_shapes();
    let nodes = child
        .layers
        .iter()
        .zip(&cs)
        .enumerate()
        .map(|(i, (layer, shape))| match (parent.layers.get(i), ps.get(i)) {
            (Some(pl), Some(pshape)) => {
                pl == layer
                    && pshape.in_channels == shape.in_channels
                    && pshape.out_channels == shape.out_channels
            }
            _ => false,
        })
        .collect();
    InheritPlan {
        stem: parent.in_channels == child.in_channels && parent.stem_width == child.stem_width,
        nodes,
        head: parent.feature_channels() == child.feature_channels()
            && parent.classes == child.classes,
    }
}

fn partial_state(plan: &InheritPlan, parent: &NetworkState) -> PartialState {
    PartialState {
        stem: plan.stem.then(|| parent.stem.clone()),
        nodes: plan
            .nodes
            .iter()
            .zip(&parent.nodes)
            .map(|(&keep, s)| keep.then(|| s.clone()))
            .collect(),
        head: plan.head.then(|| parent.head.clone()),
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation accuracy over the epochs run.
    pub affinity: f64,
    pub val_history: Vec<f64>,
    pub network: StoredNetwork,
    pub plan: Option<InheritPlan>,
}

impl TrainOutcome {
    pub fn epochs(&self) -> usize {
        self.val_history.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullTrainReport {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: usize,
}

pub struct NeuralEvaluator {
    cfg: NeuralConfig,
    data: Arc<Dataset>,
    store: WeightStore,
    seed: u64,
}

impl NeuralEvaluator {
    pub fn new(cfg: NeuralConfig, data: Arc<Dataset>, seed: u64) -> Result<Self, EvalError> {
        cfg.partial.validate()?;
        Ok(Self {
            cfg,
            data,
            store: WeightStore::new(),
            seed,
        })
    }

    pub fn from_config(cfg: &NeuralConfig, seed: u64) -> Result<Self, EvalError> {
        let data = Dataset::from_source(&cfg.dataset)?;
        Self::new(cfg.clone(), Arc::new(data), seed)
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn stored(&self, handle: WeightHandle) -> Result<&StoredNetwork, EvalError> {
        self.store.get(handle).ok_or(EvalError::UnknownHandle(handle))
    }

    pub fn insert(&mut self, network: StoredNetwork) -> WeightHandle {
        self.store.insert(network)
    }

    /// Network spec for a genome over a decodable space.
    pub fn decode(&self, genome: &ArchitectureGenome) -> Result<NetworkSpec, EvalError> {
        let (c, h, w) = self.data.image_shape();
        let space = genome.space();
        let layers = genome
            .discretize()
            .layers
            .iter()
            .map(|l| decode_layer(space, l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NetworkSpec {
            in_channels: c,
            height: h,
            width: w,
            stem_width: self.cfg.stem_width,
            layers,
            classes: self.data.classes,
            dropout: self.cfg.dropout,
        })
    }

    fn init_seed(&self, genome: &ArchitectureGenome, data_seed: u64) -> u64 {
        rng::derive_seed(self.seed, &[rng::hash_str(&genome.encoding()), data_seed])
    }

    /// The network a partial evaluation starts from: He-initialized, with
    /// every layer the plan allows copied from `inherited`.
    pub fn initial_network(
        &self,
        genome: &ArchitectureGenome,
        inherited: Option<&StoredNetwork>,
        data_seed: u64,
    ) -> Result<(Network, Option<InheritPlan>), EvalError> {
        let spec = self.decode(genome)?;
        let mut net = Network::new(&spec, self.init_seed(genome, data_seed))?;
        let plan = match inherited {
            Some(parent) => {
                let plan = inherit_plan(&parent.spec, &spec);
                net.load_partial(&partial_state(&plan, &parent.state))?;
                Some(plan)
            }
            None => None,
        };
        Ok((net, plan))
    }

    /// Partial evaluation. When `inherited` is given, matching layers start
    /// from its parameters and the rest use He initialization.
    pub fn train_partial(
        &self,
        genome: &ArchitectureGenome,
        inherited: Option<&StoredNetwork>,
        data_seed: u64,
    ) -> Result<TrainOutcome, EvalError> {
        self.train_partial_with(genome, inherited, data_seed, &self.cfg.partial)
    }

    pub fn train_partial_with(
        &self,
        genome: &ArchitectureGenome,
        inherited: Option<&StoredNetwork>,
        data_seed: u64,
        tc: &TrainConfig,
    ) -> Result<TrainOutcome, EvalError> {
        tc.validate()?;
        let (mut net, plan) = self.initial_network(genome, inherited, data_seed)?;
        let spec = net.spec().clone();
        let seed = self.init_seed(genome, data_seed);
        let split = dataset::split(&self.data.train, tc.val_fraction, tc.subset_fraction, data_seed);
        let mut opt = Adam::new(tc.beta1, tc.beta2, tc.weight_decay);
        let mut schedule = CosineSchedule::new(tc.learning_rate, tc.max_epochs);
        if !tc.cosine {
            schedule.min_lr = tc.learning_rate;
        }
        let mut shuffle = rng::stream(seed, &[rng::hash_str("shuffle")]);
        let mut best = f64::NEG_INFINITY;
        let mut best_state = net.state();
        let mut reference = f64::NEG_INFINITY;
        let mut stall = 0;
        let mut history = Vec::new();
        for epoch in 0..tc.max_epochs {
            train_epoch(&mut net, &mut opt, &schedule, epoch, &split.train, tc.batch_size, &mut shuffle)
                .map_err(|e| EvalError::Diverged(e.to_string()))?;
            let acc = accuracy(&mut net, &split.val, EVAL_BATCH);
            history.push(acc);
            if acc > best {
                best = acc;
                best_state = net.state();
            }
            if acc > reference + tc.early_stop_threshold {
                reference = acc;
                stall = 0;
            } else {
                stall += 1;
                if stall >= tc.early_stop_patience {
                    break;
                }
            }
        }
        Ok(TrainOutcome {
            affinity: best.clamp(0.0, 1.0),
            val_history: history,
            network: StoredNetwork {
                spec,
                state: best_state,
            },
            plan,
        })
    }

    /// Continues training stored weights on the training pool minus a fixed
    /// validation split, with a restarting cosine schedule and no early
    /// stopping. The trained weights get a new handle.
    pub fn full_train(
        &mut self,
        handle: WeightHandle,
        fc: &FullTrainConfig,
        split_seed: u64,
    ) -> Result<(WeightHandle, FullTrainReport), EvalError> {
        let stored = self.stored(handle)?.clone();
        let mut net = Network::new(&stored.spec, rng::derive_seed(split_seed, &[handle]))?;
        net.load_state(&stored.state)?;
        let val_fraction = self.cfg.partial.val_fraction;
        let split = dataset::split(&self.data.train, val_fraction, 1.0 - val_fraction, split_seed);
        let mut opt = Adam::new(self.cfg.partial.beta1, self.cfg.partial.beta2, self.cfg.partial.weight_decay);
        let schedule = CosineSchedule::new(fc.learning_rate, fc.epochs).with_restarts(fc.restarts.clone());
        let mut shuffle = rng::stream(split_seed, &[rng::hash_str("full"), handle]);
        for epoch in 0..fc.epochs {
            train_epoch(&mut net, &mut opt, &schedule, epoch, &split.train, fc.batch_size, &mut shuffle)
                .map_err(|e| EvalError::Diverged(e.to_string()))?;
        }
        let report = FullTrainReport {
            val_accuracy: accuracy(&mut net, &split.val, EVAL_BATCH),
            test_accuracy: accuracy(&mut net, &self.data.test, EVAL_BATCH),
            epochs: fc.epochs,
        };
        let new = self.store.insert(StoredNetwork {
            spec: stored.spec,
            state: net.state(),
        });
        Ok((new, report))
    }

    /// Class probabilities of the stored network for every sample.
    pub fn predict(&self, handle: WeightHandle, data: &LabeledData) -> Result<Vec<Vec<f64>>, EvalError> {
        let stored = self.stored(handle)?;
        let mut net = Network::new(&stored.spec, 0)?;
        net.load_state(&stored.state)?;
        Ok(predict_proba(&mut net, data, EVAL_BATCH))
    }
}

impl Evaluator for NeuralEvaluator {
    fn name(&self) -> &'static str {
        NAME
    }

    fn check_space(&self, space: &SearchSpace) -> Result<(), EvalError> {
        let incompatible = |reason: String| EvalError::Incompatible {
            evaluator: NAME.into(),
            space: space.name().into(),
            reason,
        };
        if !space.decodable() || space.allows_skip_connections() {
            return Err(incompatible("only sequential decodable spaces can be trained".into()));
        }
        for op in space.operations() {
            if !matches!(op.name.as_str(), "Conv" | "DSepConv" | "Pool" | IDENTITY) {
                return Err(incompatible(format!("no network layer for operation `{}`", op.name)));
            }
            for hp in &op.hyperparams {
                for v in &hp.values {
                    let layer = DiscreteLayer {
                        operation: op.name.clone(),
                        hyperparams: op
                            .hyperparams
                            .iter()
                            .map(|h| if h.name == hp.name { v.clone() } else { h.values[0].clone() })
                            .collect(),
                        second_input: None,
                        aggregation: None,
                    };
                    decode_layer(space, &layer).map_err(|e| incompatible(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, request: &EvalRequest<'_>) -> Result<Evaluation, EvalError> {
        let inherited = match request.parent {
            Some(link) => Some(self.stored(link.weights)?),
            None => None,
        };
        let outcome = self.train_partial(request.genome, inherited, request.data_seed)?;
        let epochs = outcome.epochs();
        let handle = self.store.insert(outcome.network);
        Ok(Evaluation {
            affinity: outcome.affinity,
            weights: Some(handle),
            epochs,
        })
    }

    fn supports_weights(&self) -> bool {
        true
    }

    fn persist_weights(&self, handle: WeightHandle, dir: &Path) -> Result<bool, EvalError> {
        self.stored(handle)?.save(dir)?;
        Ok(true)
    }

    fn as_neural(&mut self) -> Option<&mut NeuralEvaluator> {
        Some(self)
    }
}

fn decode_layer(space: &SearchSpace, layer: &DiscreteLayer) -> Result<LayerSpec, EvalError> {
    let op = space.operation(&layer.operation).ok_or_else(|| EvalError::Incompatible {
        evaluator: NAME.into(),
        space: space.name().into(),
        reason: format!("unknown operation `{}`", layer.operation),
    })?;
    let value = |name: &str| op.hyperparam_index(name).map(|i| &layer.hyperparams[i]);
    let bad = |what: &str, v: &ParamValue| EvalError::Incompatible {
        evaluator: NAME.into(),
        space: space.name().into(),
        reason: format!("`{}` has unusable {what} {v}", op.name),
    };
    let flag = |name: &str| -> Result<bool, EvalError> {
        value(name).map_or(Ok(true), |v| v.as_bool().ok_or_else(|| bad(name, v)))
    };
    let kernel = |default: usize| -> Result<usize, EvalError> {
        match value("kernel_size") {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(k) if k >= 1.0 && k.fract() == 0.0 && (k as usize) % 2 == 1 => Ok(k as usize),
                _ => Err(bad("kernel_size", v)),
            },
        }
    };
    Ok(match op.name.as_str() {
        "Conv" => LayerSpec::Conv {
            kernel: kernel(3)?,
            batchnorm: flag("batchnorm")?,
            relu: flag("relu")?,
        },
        "DSepConv" => LayerSpec::SepConv {
            kernel: kernel(3)?,
            batchnorm: flag("batchnorm")?,
            relu: flag("relu")?,
        },
        "Pool" => {
            let kind = match value("type") {
                None => PoolKind::Max,
                Some(v) => match v.as_label() {
                    Some("Max") => PoolKind::Max,
                    Some("Avg") => PoolKind::Avg,
                    _ => return Err(bad("type", v)),
                },
            };
            let multiplier = match value("channel_multiplier") {
                None => 1.0,
                Some(v) => v.as_f64().filter(|m| *m > 0.0).ok_or_else(|| bad("channel_multiplier", v))?,
            };
            LayerSpec::Pool {
                kind,
                kernel: kernel(3)?,
                multiplier,
            }
        }
        IDENTITY => LayerSpec::Identity,
        other => {
            return Err(EvalError::Incompatible {
                evaluator: NAME.into(),
                space: space.name().into(),
                reason: format!("no network layer for operation `{other}`"),
            })
        }
    })
}
