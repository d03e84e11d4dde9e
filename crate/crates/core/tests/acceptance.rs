//! Acceptance suite. Each test prints one line `criterion N: PASS|FAIL ...`
//! and fails when its criterion is not met.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use immunecs::config::{DatasetSource, FullTrainConfig, NeuralConfig, RunConfig, SearchConfig, TrainConfig};
use immunecs::evaluator::{
    inherit_plan, NeuralEvaluator, SurrogateConfig, SurrogateEvaluator, SurrogateLandscape,
};
use immunecs::experiments::{locality_experiment, partial_eval_experiment, progressive_experiment, AppendMode};
use immunecs::genome::{bin_index, random_genome};
use immunecs::mutation::{mutate_clone, mutation_rate, mutation_sigma, sample_delta, MutationConfig};
use immunecs::pipeline;
use immunecs::search::{search, Stage};
use immunecs::space::{block_space, sequential_space};
use immunecs::stats::{paired_permutation_test, spearman, Alternative};
use immunecs::{ArchitectureGenome, ParamValue, SearchSpace};
use immunecs_nn::layers::{BatchNorm2d, Conv2d, DepthwiseConv2d, GlobalConcatPool, Layer, Pool2d, PoolKind, Relu};
use immunecs_nn::{softmax_cross_entropy, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, pass: bool, limit_secs: f64, start: Instant, detail: String) {
    let secs = start.elapsed().as_secs_f64();
    let ok = pass && secs < limit_secs;
    // Written to the raw handle so the line survives libtest output capture.
    let line = format!(
        "criterion {n}: {} {detail} [{secs:.1}s, limit {limit_secs:.0}s]\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {n} not met: {detail} in {secs:.1}s");
}

fn surrogate(space: &SearchSpace, seed: u64) -> SurrogateEvaluator {
    SurrogateEvaluator::new(SurrogateLandscape::generate(space, &SurrogateConfig::default(), seed))
}

#[test]
fn criterion_01_mutation_law() {
    let start = Instant::now();
    let mut rate_err: f64 = 0.0;
    for i in 0..=100 {
        let f = i as f64 / 100.0;
        for rho in [0.05, 0.1, 0.2, 0.5, 1.0] {
            let alpha = mutation_rate(f, rho).unwrap();
            rate_err = rate_err.max((alpha - (-f / rho).exp()).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (f, rho, l, depth) in [(0.3, 0.2, 0, 4), (0.5, 0.2, 3, 6), (0.1, 0.5, 8, 9)] {
        let alpha = mutation_rate(f, rho).unwrap();
        let sigma = mutation_sigma(alpha, l, depth).unwrap();
        let expected = (-f / rho).exp() * (l + 1) as f64 / depth as f64;
        let samples: Vec<f64> = (0..100_000).map(|_| sample_delta(sigma, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        worst = worst.max((var.sqrt() / expected - 1.0).abs());
    }
    verdict(
        1,
        rate_err <= 1e-12 && worst < 0.02,
        10.0,
        start,
        format!("max |alpha error| {rate_err:.1e}, worst relative sigma error {worst:.4}"),
    );
}

#[test]
fn criterion_02_locality() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let mutation = MutationConfig::default();
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 0..10 {
        let mut evaluator = surrogate(&space, seed);
        let report =
            locality_experiment(&space, &mut evaluator, 100, 10, &[3, 9], &mutation, Alternative::TwoSided, seed)
                .unwrap();
        let ok = report.groups.iter().all(|g| {
            let (m, s) = (&g.mean.correlation, &g.std.correlation);
            m.r.is_some_and(|r| r > 0.4)
                && m.p.is_some_and(|p| p < 0.01)
                && s.r.is_some_and(|r| r < 0.0)
                && s.p.is_some_and(|p| p < 0.05)
        });
        good += ok as usize;
        let g9 = &report.groups[1];
        notes.push(format!(
            "{:.2}/{:.2}",
            g9.mean.correlation.r.unwrap_or(f64::NAN),
            g9.std.correlation.r.unwrap_or(f64::NAN)
        ));
    }
    verdict(
        2,
        good >= 9,
        60.0,
        start,
        format!("{good}/10 seeds meet both depths; depth-9 r(mean)/r(std) per seed: {}", notes.join(" ")),
    );
}

fn surrogate_search_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.search.max_evaluations = Some(1000);
    cfg
}

#[test]
fn criterion_03_ais_beats_random_search() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let cfg = surrogate_search_config();
    let (mut ais, mut rs) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let a = pipeline::run("ais", "surrogate", &space, &cfg, seed).unwrap();
        let mut matched = cfg.clone();
        matched.baseline.budget = Some(a.outcome.evaluations);
        let r = pipeline::run("random", "surrogate", &space, &matched, seed).unwrap();
        assert_eq!(a.outcome.evaluations, r.outcome.evaluations);
        ais.push(a.summary.final_mean_affinity);
        rs.push(r.summary.final_mean_affinity);
    }
    let test = paired_permutation_test(&ais, &rs, Alternative::Greater, 3).unwrap();
    verdict(
        3,
        test.difference > 0.0 && test.p < 0.05,
        300.0,
        start,
        format!(
            "mean final affinity AIS {:.4} vs RS {:.4}, one-tailed p {:.4}",
            test.mean_a, test.mean_b, test.p
        ),
    );
}

#[test]
fn criterion_04_ais_coverage_vs_ga() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let cfg = surrogate_search_config();
    let coverage = |r: &pipeline::RunResult| r.summary.metrics["coverage"].as_u64().unwrap() as f64;
    let (mut ais, mut ga) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let a = pipeline::run("ais", "surrogate", &space, &cfg, seed).unwrap();
        let mut matched = cfg.clone();
        matched.baseline.budget = Some(a.outcome.evaluations);
        let g = pipeline::run("ga", "surrogate", &space, &matched, seed).unwrap();
        ais.push(coverage(&a));
        ga.push(coverage(&g));
    }
    let (ma, mg) = (immunecs::stats::median(&ais).unwrap(), immunecs::stats::median(&ga).unwrap());
    verdict(
        4,
        ma >= mg,
        300.0,
        start,
        format!("median bump coverage AIS {ma} vs GA {mg} (AIS {ais:?}, GA {ga:?})"),
    );
}

fn desk_neural_config(data_seed: u64) -> NeuralConfig {
    NeuralConfig {
        stem_width: 8,
        dropout: 0.2,
        dataset: DatasetSource::Procedural {
            classes: 4,
            train: 600,
            test: 400,
            noise: 0.5,
            seed: data_seed,
        },
        partial: TrainConfig {
            subset_fraction: 0.5,
            val_fraction: 0.25,
            max_epochs: 8,
            ..TrainConfig::default()
        },
        full: FullTrainConfig {
            epochs: 10,
            restarts: vec![5],
            ..FullTrainConfig::default()
        },
    }
}

#[test]
fn criterion_05_committee_beats_best_member() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let mut wins = 0;
    let mut gains = Vec::new();
    for seed in 0..5 {
        let mut cfg = RunConfig::default();
        cfg.neural = desk_neural_config(100 + seed);
        cfg.search = SearchConfig {
            population: 8,
            initial_depth: 3,
            clones_per_parent: 2,
            insertions: 2,
            augment_copies: 1,
            max_evaluations: Some(120),
            ..SearchConfig::default()
        };
        let mut result = pipeline::run("ais", "neural", &space, &cfg, seed).unwrap();
        let neural = result.evaluator.as_neural().unwrap();
        let report = pipeline::committee_report(neural, &result.outcome.population, &cfg.committee, seed).unwrap();
        let m = &report.metrics;
        wins += (m.committee_accuracy >= m.best_member_accuracy) as usize;
        gains.push(m.gain);
    }
    let median_gain = immunecs::stats::median(&gains).unwrap();
    verdict(
        5,
        wins >= 4 && median_gain > 0.0,
        1800.0,
        start,
        format!("committee >= best member in {wins}/5 runs, median gain {median_gain:.4}, gains {gains:.4?}"),
    );
}

#[test]
fn criterion_06_partial_vs_full_training() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let cfg = desk_neural_config(7);
    let mut neural = NeuralEvaluator::from_config(&cfg, 11).unwrap();
    let report =
        partial_eval_experiment(&space, &mut neural, 40, &[3, 9], &cfg.partial, &cfg.full, Alternative::TwoSided, 11)
            .unwrap();
    let c = &report.overall.correlation;
    let groups: Vec<String> = report
        .groups
        .iter()
        .map(|g| format!("{} r={:.3}", g.label, g.correlation.r.unwrap_or(f64::NAN)))
        .collect();
    verdict(
        6,
        report.pairs.len() >= 40 && c.r.is_some_and(|r| r > 0.5) && c.p.is_some_and(|p| p < 0.01),
        1800.0,
        start,
        format!(
            "n={} overall r={:.3} p={:.2e} ({})",
            report.pairs.len(),
            c.r.unwrap_or(f64::NAN),
            c.p.unwrap_or(f64::NAN),
            groups.join(", ")
        ),
    );
}

#[test]
fn criterion_07_progressive_correlation() {
    let start = Instant::now();
    let space = Arc::new(sequential_space());
    let mut evaluator = surrogate(&space, 5);
    let report =
        progressive_experiment(&space, &mut evaluator, 60, &[3, 6, 9], AppendMode::Random, Alternative::TwoSided, 5)
            .unwrap();
    let c = &report.overall.correlation;
    verdict(
        7,
        report.pairs.len() >= 60 && c.r.is_some_and(|r| r > 0.4) && c.p.is_some_and(|p| p < 0.01),
        60.0,
        start,
        format!(
            "n={} r={:.3} p={:.2e}",
            report.pairs.len(),
            c.r.unwrap_or(f64::NAN),
            c.p.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_08_population_accounting() {
    let start = Instant::now();
    let space = Arc::new(block_space());
    let mut checked = 0;
    let mut bad = Vec::new();
    for (seed, (n, n_a, n_i)) in [(12, 3, 2), (5, 1, 4), (8, 2, 0)].into_iter().enumerate() {
        let cfg = SearchConfig {
            population: n,
            augment_copies: n_a,
            insertions: n_i,
            tau: f64::INFINITY,
            max_generations: 12,
            ..SearchConfig::default()
        };
        let mut evaluator = surrogate(&space, seed as u64);
        let out = search(&cfg, &MutationConfig::default(), &space, &mut evaluator, seed as u64).unwrap();
        for e in &out.events {
            let expected = match e.stage {
                Stage::Init => n * (1 + n_a),
                Stage::Selection => n,
                Stage::Insertion => n + n_i,
                Stage::Augmentation => (n + n_i) * (1 + n_a),
            };
            checked += 1;
            if e.size != expected {
                bad.push(format!("{:?}@{}: {} != {expected}", e.stage, e.generation, e.size));
            }
        }
        assert!(out.events.iter().any(|e| e.stage == Stage::Augmentation));
    }
    verdict(
        8,
        bad.is_empty() && checked > 0,
        60.0,
        start,
        format!("{checked} population-size events checked, mismatches: {bad:?}"),
    );
}

#[test]
fn criterion_09_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut runs = Vec::new();
    let mut neural_cfg = RunConfig::default();
    neural_cfg.neural = desk_neural_config(3);
    neural_cfg.neural.partial.max_epochs = 2;
    neural_cfg.search = SearchConfig {
        population: 3,
        clones_per_parent: 1,
        insertions: 1,
        augment_copies: 1,
        max_evaluations: Some(12),
        ..SearchConfig::default()
    };
    let cases = [
        ("fmnist-seq", "surrogate", RunConfig::default()),
        ("cifar-blocks", "surrogate", RunConfig::default()),
        ("fmnist-seq", "neural", neural_cfg),
    ];
    for (i, (space, evaluator, cfg)) in cases.iter().enumerate() {
        let space = SearchSpace::resolve(space).unwrap();
        let mut files = Vec::new();
        for rep in 0..2 {
            let dir = tmp.path().join(format!("{i}-{rep}"));
            let result = pipeline::run("ais", evaluator, &space, cfg, 42).unwrap();
            pipeline::write(&dir, &result, "search", cfg).unwrap();
            let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
            files.push((read("trace.jsonl"), read("population.json")));
        }
        identical &= files[0] == files[1];
        runs.push(format!("{evaluator}/{}", space.name()));
    }
    verdict(
        9,
        identical,
        300.0,
        start,
        format!("byte-identical trace.jsonl and population.json for {}", runs.join(", ")),
    );
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn all_orders(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in all_orders(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Channel counts entering and leaving each layer, worked out from the
/// discrete architecture alone.
fn channel_oracle(genome: &ArchitectureGenome, stem: usize) -> Vec<(usize, usize)> {
    let mut c = stem;
    genome
        .discretize()
        .layers
        .iter()
        .map(|layer| {
            let before = c;
            if layer.operation == "Pool" {
                let m = match &layer.hyperparams[2] {
                    ParamValue::Real(m) => *m,
                    ParamValue::Int(m) => *m as f64,
                    other => panic!("multiplier {other}"),
                };
                c = ((c as f64 * m).round() as usize).max(1);
            }
            (before, c)
        })
        .collect()
}

#[test]
fn criterion_10_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let mut spearman_mismatch = 0;
    for trial in 0..60 {
        let n = 3 + trial % 6;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (rx, ry) = (oracle_ranks(&x), oracle_ranks(&y));
        let got = spearman(&x, &y, Alternative::TwoSided).unwrap();
        if rx.iter().all(|v| *v == rx[0]) {
            spearman_mismatch += got.r.is_some() as usize;
            continue;
        }
        let r = oracle_pearson(&rx, &ry);
        let orders = all_orders(n);
        let hits = orders
            .iter()
            .filter(|o| {
                let yp: Vec<f64> = o.iter().map(|&i| ry[i]).collect();
                oracle_pearson(&rx, &yp).abs() >= r.abs() - 1e-12
            })
            .count();
        let p = hits as f64 / orders.len() as f64;
        if (got.r.unwrap() - r).abs() > 1e-12 || got.p != Some(p) {
            spearman_mismatch += 1;
        }
    }

    let mut bin_mismatch = 0;
    for k in 1..=12 {
        for _ in 0..500 {
            let g: f64 = rng.random();
            let edges = (0..k).filter(|&j| j as f64 / k as f64 <= g).count();
            if bin_index(g, k) != edges - 1 {
                bin_mismatch += 1;
            }
        }
        bin_mismatch += (bin_index(1.0, k) != k - 1) as usize + (bin_index(0.0, k) != 0) as usize;
    }

    let space = Arc::new(sequential_space());
    let cfg = NeuralConfig {
        stem_width: 16,
        dataset: DatasetSource::Procedural {
            classes: 2,
            train: 8,
            test: 4,
            noise: 0.1,
            seed: 1,
        },
        ..NeuralConfig::default()
    };
    let neural = NeuralEvaluator::from_config(&cfg, 0).unwrap();
    let mut plan_mismatch = 0;
    let mutation = MutationConfig::default();
    for _ in 0..1000 {
        let depth = rng.random_range(1..=10);
        let parent = random_genome(&space, depth, &mut rng).unwrap();
        let f = rng.random::<f64>() * 0.5;
        let child = mutate_clone(&parent, f, &mutation, &mut rng).unwrap().genome;
        let plan = inherit_plan(&neural.decode(&parent).unwrap(), &neural.decode(&child).unwrap());
        let (pc, cc) = (channel_oracle(&parent, 16), channel_oracle(&child, 16));
        let (pl, cl) = (parent.discretize().layers, child.discretize().layers);
        let expected: Vec<bool> = (0..child.depth())
            .map(|i| i < parent.depth() && pl[i] == cl[i] && pc[i] == cc[i])
            .collect();
        plan_mismatch += (plan.nodes != expected) as usize;
    }

    verdict(
        10,
        spearman_mismatch == 0 && bin_mismatch == 0 && plan_mismatch == 0,
        60.0,
        start,
        format!(
            "mismatches: spearman {spearman_mismatch}/60, binning {bin_mismatch}/6024, inheritance {plan_mismatch}/1000"
        ),
    );
}

fn random_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest relative error between analytic and central-difference gradients
/// of Σ out·P with respect to inputs and parameters.
fn layer_gradient_error(layer: &mut dyn Layer, dims: [usize; 4], rng: &mut ChaCha8Rng) -> f64 {
    const H: f64 = 1e-5;
    let x = random_tensor(dims, rng);
    let out = layer.forward(&x, true);
    let proj: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |layer: &mut dyn Layer, x: &Tensor| -> f64 {
        layer.forward(x, true).data().iter().zip(&proj).map(|(a, b)| a * b).sum()
    };
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&Tensor::from_vec(out.dims(), proj.clone()).unwrap());
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut up, mut down) = (x.clone(), x.clone());
        up.data_mut()[i] += H;
        down.data_mut()[i] -= H;
        let numeric = (objective(layer, &up) - objective(layer, &down)) / (2.0 * H);
        worst = worst.max(rel(dx.data()[i], numeric));
    }
    let count = layer.params_mut().len();
    for pi in 0..count {
        let analytic = layer.params_mut()[pi].grad.clone();
        for j in 0..analytic.len() {
            layer.params_mut()[pi].value[j] += H;
            let up = objective(layer, &x);
            layer.params_mut()[pi].value[j] -= 2.0 * H;
            let down = objective(layer, &x);
            layer.params_mut()[pi].value[j] += H;
            worst = worst.max(rel(analytic[j], (up - down) / (2.0 * H)));
        }
    }
    worst
}

#[test]
fn criterion_11_gradient_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut errors = Vec::new();
    let mut conv3 = Conv2d::new(3, 4, 3, &mut rng);
    errors.push(("conv3", layer_gradient_error(&mut conv3, [2, 3, 5, 4], &mut rng)));
    let mut conv1 = Conv2d::new(5, 3, 1, &mut rng);
    errors.push(("conv1", layer_gradient_error(&mut conv1, [3, 5, 3, 3], &mut rng)));
    let mut dw = DepthwiseConv2d::new(3, 5, &mut rng);
    errors.push(("depthwise5", layer_gradient_error(&mut dw, [2, 3, 6, 5], &mut rng)));
    let mut bn = BatchNorm2d::new(3);
    errors.push(("batchnorm", layer_gradient_error(&mut bn, [4, 3, 3, 2], &mut rng)));
    let mut avg = Pool2d::new(PoolKind::Avg, 3, 2);
    errors.push(("avgpool", layer_gradient_error(&mut avg, [2, 2, 6, 5], &mut rng)));
    let mut max = Pool2d::new(PoolKind::Max, 5, 2);
    errors.push(("maxpool", layer_gradient_error(&mut max, [2, 2, 7, 7], &mut rng)));
    let mut gp = GlobalConcatPool::new();
    errors.push(("concatpool", layer_gradient_error(&mut gp, [3, 4, 3, 3], &mut rng)));
    let mut relu = Relu::new();
    errors.push(("relu", layer_gradient_error(&mut relu, [2, 3, 4, 4], &mut rng)));

    let logits = random_tensor([4, 5, 1, 1], &mut rng);
    let labels = [0, 3, 4, 1];
    let (_, grad) = softmax_cross_entropy(&logits, &labels);
    let mut ce: f64 = 0.0;
    for i in 0..logits.len() {
        let (mut up, mut down) = (logits.clone(), logits.clone());
        up.data_mut()[i] += 1e-5;
        down.data_mut()[i] -= 1e-5;
        let numeric = (softmax_cross_entropy(&up, &labels).0 - softmax_cross_entropy(&down, &labels).0) / 2e-5;
        let a = grad.data()[i];
        ce = ce.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    errors.push(("softmax-ce", ce));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(11, worst <= 1e-3, 60.0, start, format!("max relative error {worst:.1e} ({})", detail.join(", ")));
}
