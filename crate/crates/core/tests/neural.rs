use std::sync::Arc;

use immunecs::config::{DatasetSource, NeuralConfig, TrainConfig};
use immunecs::dataset::Dataset;
use immunecs::evaluator::{EvalRequest, Evaluator, NeuralEvaluator, ParentLink, StoredNetwork};
use immunecs::genome::random_genome;
use immunecs::mutation::{mutate_clone, MutationConfig};
use immunecs::space::{sequential_space, IDENTITY};
use immunecs::{ArchitectureGenome, DataError, NodeGene, SearchSpace};
use immunecs_nn::{LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> NeuralConfig {
    NeuralConfig {
        stem_width: 4,
        dataset: DatasetSource::Procedural {
            classes: 3,
            train: 90,
            test: 30,
            noise: 0.3,
            seed: 2,
        },
        partial: TrainConfig {
            subset_fraction: 0.6,
            val_fraction: 0.3,
            max_epochs: 2,
            ..TrainConfig::default()
        },
        ..NeuralConfig::default()
    }
}

fn evaluator() -> NeuralEvaluator {
    NeuralEvaluator::from_config(&small_config(), 9).unwrap()
}

fn space() -> Arc<SearchSpace> {
    Arc::new(sequential_space())
}

fn identity_node(space: &SearchSpace) -> NodeGene {
    let k = space.operations().len();
    let idx = space.operations().iter().position(|o| o.name == IDENTITY).unwrap();
    NodeGene {
        indegree: 0.0,
        second_input: 0.0,
        aggregation: 0.0,
        operation: (idx as f64 + 0.5) / k as f64,
        hyperparams: Vec::new(),
    }
}

#[test]
fn decoding_follows_the_discrete_layers() {
    let neural = evaluator();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let space = space();
    for _ in 0..300 {
        let g = random_genome(&space, rng.random_range(1..10), &mut rng).unwrap();
        let spec = neural.decode(&g).unwrap();
        assert_eq!((spec.in_channels, spec.height, spec.width, spec.classes), (1, 16, 16, 3));
        for (layer, d) in spec.layers.iter().zip(g.discretize().layers) {
            let expected = match d.operation.as_str() {
                "Conv" => matches!(layer, LayerSpec::Conv { .. }),
                "DSepConv" => matches!(layer, LayerSpec::SepConv { .. }),
                "Pool" => matches!(layer, LayerSpec::Pool { .. }),
                _ => *layer == LayerSpec::Identity,
            };
            assert!(expected, "{} decoded as {layer:?}", d.operation);
        }
    }
}

#[test]
fn inherited_layers_are_bit_identical() {
    let neural = evaluator();
    let space = space();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mutation = MutationConfig::default();
    let mut inherited_total = 0;
    let mut fresh_total = 0;
    for trial in 0..200 {
        let parent = random_genome(&space, rng.random_range(2..8), &mut rng).unwrap();
        let parent_spec = neural.decode(&parent).unwrap();
        let stored = StoredNetwork {
            state: Network::new(&parent_spec, 1000 + trial).unwrap().state(),
            spec: parent_spec,
        };
        let child = mutate_clone(&parent, rng.random::<f64>() * 0.3, &mutation, &mut rng).unwrap().genome;
        let (net, plan) = neural.initial_network(&child, Some(&stored), 5).unwrap();
        let (fresh, _) = neural.initial_network(&child, None, 5).unwrap();
        let plan = plan.unwrap();
        let (got, fresh) = (net.state(), fresh.state());
        assert!(plan.stem);
        assert_eq!(got.stem, stored.state.stem);
        for (i, &keep) in plan.nodes.iter().enumerate() {
            if keep {
                assert_eq!(got.nodes[i], stored.state.nodes[i]);
                inherited_total += 1;
            } else {
                assert_eq!(got.nodes[i], fresh.nodes[i]);
                fresh_total += 1;
            }
        }
        if plan.head {
            assert_eq!(got.head, stored.state.head);
        } else {
            assert_eq!(got.head, fresh.head);
        }
    }
    assert!(inherited_total > 0 && fresh_total > 0);
}

#[test]
fn identity_growth_preserves_the_function() {
    let neural = evaluator();
    let space = space();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let parent = random_genome(&space, rng.random_range(1..6), &mut rng).unwrap();
        let spec = neural.decode(&parent).unwrap();
        let stored = StoredNetwork {
            state: Network::new(&spec, trial).unwrap().state(),
            spec,
        };
        let grown: ArchitectureGenome = parent.with_appended(identity_node(&space)).unwrap();
        let (mut child, plan) = neural.initial_network(&grown, Some(&stored), 1).unwrap();
        let plan = plan.unwrap();
        let (last, kept) = plan.nodes.split_last().unwrap();
        assert!(plan.head && kept.iter().all(|&b| b) && !last);
        let mut original = Network::new(&stored.spec, 0).unwrap();
        original.load_state(&stored.state).unwrap();
        let n = 4 * 256;
        let x = Tensor::from_vec([4, 1, 16, 16], (0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
        assert_eq!(child.forward(&x, false), original.forward(&x, false));
    }
}

#[test]
fn evaluation_is_deterministic_and_inherits() {
    let space = space();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let parent = random_genome(&space, 3, &mut rng).unwrap();
    let mut a = evaluator();
    let mut b = evaluator();
    let ea = a.evaluate(&EvalRequest::fresh(&parent, 7)).unwrap();
    let eb = b.evaluate(&EvalRequest::fresh(&parent, 7)).unwrap();
    assert_eq!(ea.affinity, eb.affinity);
    assert!((0.0..=1.0).contains(&ea.affinity));
    assert!(ea.epochs >= 1 && ea.epochs <= 2);
    let grown = parent.with_appended(identity_node(&space)).unwrap();
    let request = EvalRequest {
        genome: &grown,
        parent: Some(ParentLink {
            genome: &parent,
            weights: ea.weights.unwrap(),
        }),
        data_seed: 7,
    };
    let child = a.evaluate(&request).unwrap();
    assert!((0.0..=1.0).contains(&child.affinity));
}

#[test]
fn weight_store_round_trip() {
    let neural = evaluator();
    let space = space();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tmp = tempfile::tempdir().unwrap();
    for i in 0..10 {
        let g = random_genome(&space, 1 + i % 7, &mut rng).unwrap();
        let spec = neural.decode(&g).unwrap();
        let stored = StoredNetwork {
            state: Network::new(&spec, i as u64).unwrap().state(),
            spec,
        };
        let dir = tmp.path().join(i.to_string());
        stored.save(&dir).unwrap();
        assert!(dir.join("manifest.json").is_file());
        assert_eq!(StoredNetwork::load(&dir).unwrap(), stored);
    }
    assert!(StoredNetwork::load(&tmp.path().join("missing")).is_err());
}

#[test]
fn dataset_file_round_trip() {
    let data = Dataset::procedural(4, 40, 12, 0.35, 3).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.imncs");
    data.save(&path).unwrap();
    let once = Dataset::load(&path).unwrap();
    assert_eq!(once.classes, 4);
    assert_eq!(once.train.labels, data.train.labels);
    assert_eq!(once.test.labels, data.test.labels);
    let diff = once
        .train
        .inputs
        .data()
        .iter()
        .zip(data.train.inputs.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-6);
    once.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), once);

    let bytes = std::fs::read(&path).unwrap();
    let bad = tmp.path().join("bad.imncs");
    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(Dataset::load(&bad), Err(DataError::Format { .. })));
    std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Dataset::load(&bad).is_err());
}

#[test]
fn procedural_data_is_balanced_and_seeded() {
    let a = Dataset::procedural(4, 100, 40, 0.35, 11).unwrap();
    assert_eq!(a, Dataset::procedural(4, 100, 40, 0.35, 11).unwrap());
    assert_ne!(a, Dataset::procedural(4, 100, 40, 0.35, 12).unwrap());
    for c in 0..4 {
        assert_eq!(a.train.labels.iter().filter(|&&y| y == c).count(), 25);
    }
    assert_eq!(a.image_shape(), (1, 16, 16));
}
