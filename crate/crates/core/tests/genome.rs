use std::collections::HashMap;
use std::sync::Arc;

use immunecs::genome::random_genome;
use immunecs::mutation::{mutate_clone, ChangeCategory, MutationConfig};
use immunecs::space::{block_space, sequential_space};
use immunecs::{Aggregation, ArchitectureGenome, DiscreteArchitecture, DiscreteLayer, SearchSpace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reads an encoding back into a discrete architecture over `space`.
fn parse(space: &SearchSpace, encoding: &str) -> DiscreteArchitecture {
    let layers = encoding
        .split(';')
        .map(|layer| {
            let fields: Vec<&str> = layer.split('|').collect();
            assert_eq!(fields.len(), 4, "layer `{layer}`");
            let input = fields[0].strip_prefix("in=").unwrap();
            let agg = fields[1].strip_prefix("agg=").unwrap();
            let op_name = fields[2].strip_prefix("op=").unwrap();
            let hps = fields[3].strip_prefix("h=").unwrap();
            let op = space.operation(op_name).unwrap();
            let texts: Vec<&str> = if hps.is_empty() { Vec::new() } else { hps.split(',').collect() };
            assert_eq!(texts.len(), op.hyperparams.len());
            let hyperparams = op
                .hyperparams
                .iter()
                .zip(texts)
                .map(|(hp, text)| hp.values.iter().find(|v| v.to_string() == text).unwrap().clone())
                .collect();
            DiscreteLayer {
                operation: op_name.to_string(),
                hyperparams,
                second_input: (input != "-").then(|| input.parse().unwrap()),
                aggregation: match agg {
                    "A" => Some(Aggregation::Add),
                    "C" => Some(Aggregation::Concat),
                    "-" => None,
                    other => panic!("aggregation {other}"),
                },
            }
        })
        .collect();
    DiscreteArchitecture { layers }
}

fn spaces() -> [Arc<SearchSpace>; 2] {
    [Arc::new(sequential_space()), Arc::new(block_space())]
}

fn genome(space_index: usize, depth: usize, seed: u64) -> ArchitectureGenome {
    let space = &spaces()[space_index];
    random_genome(space, depth, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encoding_round_trips(space_index in 0usize..2, depth in 1usize..16, seed in any::<u64>()) {
        let g = genome(space_index, depth, seed);
        let encoding = g.encoding();
        prop_assert_eq!(parse(g.space(), &encoding), g.discretize());
        prop_assert_eq!(g.discretize().encode(), encoding);
    }

    #[test]
    fn mutation_keeps_genomes_valid(
        space_index in 0usize..2,
        depth in 1usize..12,
        seed in any::<u64>(),
        affinity in 0.0f64..1.0,
    ) {
        let parent = genome(space_index, depth, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
        let out = mutate_clone(&parent, affinity, &MutationConfig::default(), &mut rng).unwrap();
        let child = &out.genome;
        prop_assert_eq!(child.depth(), parent.depth());
        prop_assert!(ArchitectureGenome::new(child.space().clone(), child.nodes().to_vec()).is_ok());
        prop_assert_eq!(out.changes.len(), depth);
        let unchanged = out.changes.iter().all(|c| *c == ChangeCategory::Unchanged);
        prop_assert_eq!(unchanged, child.discretize() == parent.discretize());
        if out.connections_changed() {
            for (a, b) in parent.nodes().iter().zip(child.nodes()) {
                prop_assert_eq!(a.aggregation, b.aggregation);
                prop_assert_eq!(a.operation, b.operation);
                prop_assert_eq!(&a.hyperparams, &b.hyperparams);
            }
        }
        if !parent.space().allows_skip_connections() {
            prop_assert!(!out.connections_changed());
        }
        prop_assert_eq!(&child.nodes()[0].indegree, &parent.nodes()[0].indegree);
    }
}

#[test]
fn distinct_architectures_have_distinct_encodings() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for space in spaces() {
        let mut seen: HashMap<String, DiscreteArchitecture> = HashMap::new();
        for i in 0..10_000 {
            let g = random_genome(&space, 1 + i % 6, &mut rng).unwrap();
            let d = g.discretize();
            if let Some(previous) = seen.insert(g.encoding(), d.clone()) {
                assert_eq!(previous, d, "two architectures share an encoding");
            }
        }
        assert!(seen.len() > 1000);
    }
}

#[test]
fn first_node_reads_only_its_predecessor() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let space = Arc::new(block_space());
    for _ in 0..500 {
        let g = random_genome(&space, 6, &mut rng).unwrap();
        assert_eq!(g.indegree(0), 1);
        assert_eq!(g.second_input(0), None);
        for i in 1..6 {
            if let Some(k) = g.second_input(i) {
                assert!(k < i);
                assert!(g.aggregation(i).is_some());
            }
        }
    }
}
