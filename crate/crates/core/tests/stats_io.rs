use std::path::Path;

use immunecs::io::{self, compare_runs, RunSummary};
use immunecs::stats::{paired_permutation_test, permutation_test, spearman, Alternative};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let tied = v.iter().filter(|y| *y == x).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * y.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
    num / den
}

#[test]
fn spearman_matches_rank_then_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let n = rng.random_range(3..40);
        let tied = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if tied {
                rng.random_range(0..5) as f64
            } else {
                rng.random::<f64>()
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let got = spearman(&x, &y, Alternative::TwoSided).unwrap();
        let (rx, ry) = (ranks(&x), ranks(&y));
        let constant = |r: &[f64]| r.iter().all(|v| *v == r[0]);
        if constant(&rx) || constant(&ry) {
            assert_eq!(got.r, None);
            continue;
        }
        let r = got.r.unwrap();
        assert!((r - pearson(&rx, &ry)).abs() < 1e-12, "trial {trial}");
        let p = got.p.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn spearman_p_value_tails() {
    let x: Vec<f64> = (0..30).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| v + if (*v as i32) % 3 == 0 { 5.0 } else { 0.0 }).collect();
    let two = spearman(&x, &y, Alternative::TwoSided).unwrap().p.unwrap();
    let greater = spearman(&x, &y, Alternative::Greater).unwrap().p.unwrap();
    let less = spearman(&x, &y, Alternative::Less).unwrap().p.unwrap();
    assert!((two - 2.0 * greater).abs() < 1e-12);
    assert!(less > 0.99);
    let exact = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Alternative::Greater)
        .unwrap();
    assert!(exact.exact);
    assert!((exact.p.unwrap() - 1.0 / 720.0).abs() < 1e-15);
}

#[test]
fn permutation_test_floor_and_identity() {
    let a = [0.9, 0.91, 0.92, 0.93, 0.94];
    let b = [0.1, 0.2, 0.3, 0.4, 0.5];
    let t = permutation_test(&a, &b, Alternative::Greater, 0).unwrap();
    assert!(t.exact);
    assert!((t.p - 1.0 / 252.0).abs() < 1e-15);
    let same = permutation_test(&a, &a, Alternative::TwoSided, 0).unwrap();
    assert!((same.p - 1.0).abs() < 1e-12);
    let paired = paired_permutation_test(&a, &b, Alternative::Greater, 0).unwrap();
    assert!((paired.p - 1.0 / 32.0).abs() < 1e-15);
}

fn fake_run(dir: &Path, value: f64) {
    let summary = RunSummary {
        strategy: "ais".into(),
        evaluator: "surrogate".into(),
        space: "fmnist-seq".into(),
        seed: 0,
        evaluations: 10,
        failures: 0,
        generations: 1,
        final_mean_affinity: value,
        final_best_affinity: value,
        metrics: serde_json::Map::new(),
    };
    io::create_dir(dir).unwrap();
    io::write_json(&dir.join(io::SUMMARY), &summary).unwrap();
}

#[test]
fn compare_runs_over_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for i in 0..5 {
        fake_run(&a.join(format!("run{i}")), 0.8 + i as f64 / 100.0);
        fake_run(&b.join(format!("run{i}")), 0.5 + i as f64 / 100.0);
    }
    let r = compare_runs(&a, &b, "final_mean_affinity", Alternative::Greater, 0).unwrap();
    assert_eq!(r.runs_a.len(), 5);
    assert!((r.test.p - 1.0 / 252.0).abs() < 1e-15);
    let same = compare_runs(&a, &a, "final_mean_affinity", Alternative::TwoSided, 0).unwrap();
    assert!((same.test.p - 1.0).abs() < 1e-12);
    assert!(compare_runs(&a, &b, "no_such_metric", Alternative::TwoSided, 0).is_err());
    assert!(compare_runs(&a.join("run0"), &b, "final_mean_affinity", Alternative::TwoSided, 0).is_err());
}
