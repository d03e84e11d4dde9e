//! Rank correlation and permutation tests.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::StatsError;
use crate::rng;

/// Largest sample size for which Spearman p-values enumerate all permutations.
pub const EXACT_SPEARMAN_MAX_N: usize = 8;
const TIE_EPS: f64 = 1e-12;
const EXACT_COMBINATIONS_MAX: u64 = 200_000;
const MONTE_CARLO_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

impl Alternative {
    fn extreme(self, stat: f64, observed: f64) -> bool {
        match self {
            Alternative::TwoSided => stat.abs() >= observed.abs() - TIE_EPS,
            Alternative::Greater => stat >= observed - TIE_EPS,
            Alternative::Less => stat <= observed + TIE_EPS,
        }
    }
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation, `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Undefined when either sample is constant.
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub n: usize,
    pub exact: bool,
}

impl Correlation {
    pub fn significant_positive(&self, r_min: f64, alpha: f64) -> bool {
        matches!((self.r, self.p), (Some(r), Some(p)) if r > r_min && p < alpha)
    }
}

/// Spearman rank correlation with midranks for ties. The p-value enumerates
/// every permutation for n ≤ 8 and otherwise uses the t approximation with
/// n − 2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64], alternative: Alternative) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { needed: 3, got: n });
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let Some(r) = pearson(&rx, &ry) else {
        return Ok(Correlation {
            r: None,
            p: None,
            n,
            exact: false,
        });
    };
    if n <= EXACT_SPEARMAN_MAX_N {
        let mut perm = ry.clone();
        let mut hits = 0u64;
        let mut total = 0u64;
        heap_permutations(&mut perm, &mut |p| {
            total += 1;
            let rp = pearson(&rx, p).unwrap_or(0.0);
            if alternative.extreme(rp, r) {
                hits += 1;
            }
        });
        return Ok(Correlation {
            r: Some(r),
            p: Some(hits as f64 / total as f64),
            n,
            exact: true,
        });
    }
    let df = (n - 2) as f64;
    let p = if (1.0 - r.abs()) < 1e-15 {
        match alternative {
            Alternative::TwoSided => 0.0,
            Alternative::Greater => if r > 0.0 { 0.0 } else { 1.0 },
            Alternative::Less => if r < 0.0 { 0.0 } else { 1.0 },
        }
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        match alternative {
            Alternative::TwoSided => (2.0 * dist.sf(t.abs())).min(1.0),
            Alternative::Greater => dist.sf(t),
            Alternative::Less => dist.cdf(t),
        }
    };
    Ok(Correlation {
        r: Some(r),
        p: Some(p),
        n,
        exact: false,
    })
}

/// Heap's algorithm: calls `visit` once for every ordering of `items`.
pub fn heap_permutations<T, F: FnMut(&[T])>(items: &mut [T], visit: &mut F) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub mean_a: f64,
    pub mean_b: f64,
    /// mean(a) − mean(b)
    pub difference: f64,
    pub p: f64,
    pub exact: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Two-sample permutation test on the difference of means. Exact over all
/// C(n_a + n_b, n_a) relabelings when that count is small, otherwise a seeded
/// Monte Carlo estimate.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
    seed: u64,
) -> Result<PermutationTest, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    let observed = mean(a) - mean(b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let k = a.len();
    let total_sum: f64 = pooled.iter().sum();
    let stat = |sum_a: f64| sum_a / k as f64 - (total_sum - sum_a) / (n - k) as f64;
    let (p, exact) = if binomial(n, k) <= EXACT_COMBINATIONS_MAX {
        let mut hits = 0u64;
        let mut total = 0u64;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            total += 1;
            let s: f64 = idx.iter().map(|&i| pooled[i]).sum();
            if alternative.extreme(stat(s), observed) {
                hits += 1;
            }
            // next k-combination in lexicographic order
            let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
        (hits as f64 / total as f64, true)
    } else {
        let mut rng = rng::stream(seed, &[rng::hash_str("permutation")]);
        let mut shuffled = pooled.clone();
        let mut hits = 0usize;
        for _ in 0..MONTE_CARLO_SAMPLES {
            shuffled.shuffle(&mut rng);
            if alternative.extreme(stat(shuffled[..k].iter().sum()), observed) {
                hits += 1;
            }
        }
        ((hits + 1) as f64 / (MONTE_CARLO_SAMPLES + 1) as f64, false)
    };
    Ok(PermutationTest {
        mean_a: mean(a),
        mean_b: mean(b),
        difference: observed,
        p,
        exact,
    })
}

/// Paired permutation test: random sign flips of the differences a_i − b_i.
pub fn paired_permutation_test(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
    seed: u64,
) -> Result<PermutationTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let observed = mean(&diffs);
    let (p, exact) = if n <= 20 {
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                .sum();
            if alternative.extreme(s / n as f64, observed) {
                hits += 1;
            }
        }
        (hits as f64 / (1u64 << n) as f64, true)
    } else {
        let mut rng = rng::stream(seed, &[rng::hash_str("sign-flip")]);
        let mut hits = 0usize;
        for _ in 0..MONTE_CARLO_SAMPLES {
            let s: f64 = diffs.iter().map(|d| if rng.random::<bool>() { -d } else { *d }).sum();
            if alternative.extreme(s / n as f64, observed) {
                hits += 1;
            }
        }
        ((hits + 1) as f64 / (MONTE_CARLO_SAMPLES + 1) as f64, false)
    };
    Ok(PermutationTest {
        mean_a: mean(a),
        mean_b: mean(b),
        difference: observed,
        p,
        exact,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn monotone_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let up: Vec<f64> = x.iter().map(|v| v * v).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &up, Alternative::TwoSided).unwrap().r, Some(1.0));
        assert_eq!(spearman(&x, &down, Alternative::TwoSided).unwrap().r, Some(-1.0));
    }

    #[test]
    fn constant_input_is_undefined() {
        let c = spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0], Alternative::TwoSided).unwrap();
        assert_eq!(c.r, None);
        assert_eq!(c.p, None);
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0], Alternative::TwoSided).is_err());
    }

    #[test]
    fn heap_visits_every_permutation_once() {
        let mut items = [0, 1, 2, 3];
        let mut seen = std::collections::HashSet::new();
        heap_permutations(&mut items, &mut |p| {
            seen.insert(p.to_vec());
        });
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn disjoint_samples_hit_exact_floor() {
        let a = [10.0, 11.0, 12.0, 13.0, 14.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = permutation_test(&a, &b, Alternative::Greater, 0).unwrap();
        assert!(t.exact);
        assert!((t.p - 1.0 / 252.0).abs() < 1e-15);
        let same = permutation_test(&a, &a, Alternative::TwoSided, 0).unwrap();
        assert_eq!(same.p, 1.0);
    }

    #[test]
    fn paired_all_positive() {
        let a = [2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.0, 1.0, 1.0, 1.0];
        let t = paired_permutation_test(&a, &b, Alternative::Greater, 0).unwrap();
        assert!((t.p - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944487358056).abs() < 1e-12);
    }
}
