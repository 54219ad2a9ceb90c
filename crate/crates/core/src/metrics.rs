//! Calibration metrics for the synthetic harness.
//!
//! Ground truth exists only in the synthetic harness, so everything here
//! takes explicit label slices. Conventions: pseudo-labels use `-1` for
//! noise; identity labels use `-1` for instances with no real identity
//! (background clutter). Purity counts clutter in its denominator (it
//! dilutes any cluster it sneaks into) but the adjusted Rand index is
//! computed over instances that are both clustered and carry a real
//! identity.

use serde::Serialize;

use crate::proxy::ProxyDictionary;

/// One row of the per-epoch metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationMetrics {
    pub epoch: usize,
    pub purity: f64,
    pub ari: f64,
    pub retrieval_acc: f64,
    pub mean_loss: f64,
    pub filtered_clutter_rate: f64,
}

impl CalibrationMetrics {
    pub fn csv_header() -> &'static str {
        "epoch,purity,ari,retrieval_acc,mean_loss,filtered_clutter_rate"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.purity, self.ari, self.retrieval_acc, self.mean_loss,
            self.filtered_clutter_rate
        )
    }
}

/// Fraction of clustered instances claimed by their cluster's best-matching
/// real identity: `sum_k max_g |cluster_k n identity_g| / N_clustered`.
pub fn purity(labels: &[i64], identities: &[i64], cluster_count: usize) -> f64 {
    assert_eq!(labels.len(), identities.len());
    let clustered = labels.iter().filter(|&&l| l >= 0).count();
    if clustered == 0 || cluster_count == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for k in 0..cluster_count as i64 {
        let mut counts: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
        for (&l, &g) in labels.iter().zip(identities) {
            if l == k && g >= 0 {
                *counts.entry(g).or_insert(0) += 1;
            }
        }
        hits += counts.values().copied().max().unwrap_or(0);
    }
    hits as f64 / clustered as f64
}

/// Majority real identity of each cluster (ties to the smaller identity id,
/// `-1` when the cluster holds only clutter).
pub fn cluster_majorities(labels: &[i64], identities: &[i64], cluster_count: usize) -> Vec<i64> {
    assert_eq!(labels.len(), identities.len());
    let mut majorities = vec![-1i64; cluster_count];
    for k in 0..cluster_count {
        let mut counts: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
        for (&l, &g) in labels.iter().zip(identities) {
            if l == k as i64 && g >= 0 {
                *counts.entry(g).or_insert(0) += 1;
            }
        }
        // BTreeMap iteration is id-ascending, so ties keep the smaller id
        let mut best = (-1i64, 0usize);
        for (&g, &c) in &counts {
            if c > best.1 {
                best = (g, c);
            }
        }
        majorities[k] = best.0;
    }
    majorities
}

/// Adjusted Rand index between the clustering and the real identities via
/// the contingency-table formula, over instances that are clustered and
/// carry a real identity. Degenerate agreement (both partitions trivial)
/// scores 1.
pub fn adjusted_rand_index(labels: &[i64], identities: &[i64]) -> f64 {
    assert_eq!(labels.len(), identities.len());
    let pairs: Vec<(i64, i64)> = labels
        .iter()
        .zip(identities)
        .filter(|(&l, &g)| l >= 0 && g >= 0)
        .map(|(&l, &g)| (l, g))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mut contingency: std::collections::HashMap<(i64, i64), f64> = std::collections::HashMap::new();
    let mut row_sums: std::collections::HashMap<i64, f64> = std::collections::HashMap::new();
    let mut col_sums: std::collections::HashMap<i64, f64> = std::collections::HashMap::new();
    for (l, g) in pairs {
        *contingency.entry((l, g)).or_insert(0.0) += 1.0;
        *row_sums.entry(l).or_insert(0.0) += 1.0;
        *col_sums.entry(g).or_insert(0.0) += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = contingency.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = row_sums.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = col_sums.values().map(|&v| choose2(v)).sum();
    let total_pairs = choose2(n);
    if total_pairs == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total_pairs;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max_index - expected)
}

/// Nearest-proxy classification accuracy of held-out `(feature, identity)`
/// queries under cosine similarity, with each proxy standing for its
/// cluster's majority identity.
pub fn retrieval_accuracy(
    dict: &ProxyDictionary,
    majorities: &[i64],
    heldout: &[(Vec<f64>, i64)],
) -> f64 {
    assert_eq!(dict.len(), majorities.len());
    if heldout.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for (query, identity) in heldout {
        let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = (0usize, f64::NEG_INFINITY);
        for k in 0..dict.len() {
            let sim: f64 =
                dict.proxy(k).iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / qn.max(1e-300);
            if sim > best.1 {
                best = (k, sim);
            }
        }
        if majorities[best.0] == *identity {
            correct += 1;
        }
    }
    correct as f64 / heldout.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_perfect_assignment() {
        let labels = vec![0, 0, 1, 1, 2];
        let identities = vec![0, 0, 1, 1, 2];
        assert_eq!(purity(&labels, &identities, 3), 1.0);
        assert_eq!(adjusted_rand_index(&labels, &identities), 1.0);
    }

    #[test]
    fn purity_balanced_split_is_half() {
        // one cluster containing two equal-size identities
        let labels = vec![0, 0, 0, 0];
        let identities = vec![0, 0, 1, 1];
        assert_eq!(purity(&labels, &identities, 1), 0.5);
    }

    #[test]
    fn purity_counts_clutter_in_denominator() {
        // cluster of 3 with one clutter member: 2 / 3
        let labels = vec![0, 0, 0];
        let identities = vec![4, 4, -1];
        assert!((purity(&labels, &identities, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn noise_points_do_not_count() {
        let labels = vec![0, 0, -1, -1];
        let identities = vec![1, 1, 0, 2];
        assert_eq!(purity(&labels, &identities, 1), 1.0);
    }

    /// Independent pair-counting route for the adjusted Rand index.
    fn ari_pair_counting(labels: &[i64], identities: &[i64]) -> f64 {
        let pairs: Vec<(i64, i64)> = labels
            .iter()
            .zip(identities)
            .filter(|(&l, &g)| l >= 0 && g >= 0)
            .map(|(&l, &g)| (l, g))
            .collect();
        let n = pairs.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_cluster = pairs[i].0 == pairs[j].0;
                let same_class = pairs[i].1 == pairs[j].1;
                match (same_cluster, same_class) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let denom = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (n11 * n00 - n10 * n01) / denom
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let n = rng.random_range(5..40);
            let labels: Vec<i64> = (0..n).map(|_| rng.random_range(-1..4)).collect();
            let identities: Vec<i64> = (0..n).map(|_| rng.random_range(-1..3)).collect();
            if labels.iter().zip(&identities).filter(|(&l, &g)| l >= 0 && g >= 0).count() < 2 {
                continue;
            }
            let a = adjusted_rand_index(&labels, &identities);
            let b = ari_pair_counting(&labels, &identities);
            assert!((a - b).abs() < 1e-10, "contingency {a} vs pair counting {b}");
        }
    }

    #[test]
    fn majorities_tie_breaks_to_smaller_identity() {
        let labels = vec![0, 0, 0, 0, 1];
        let identities = vec![3, 1, 1, 3, -1];
        let majorities = cluster_majorities(&labels, &identities, 2);
        assert_eq!(majorities, vec![1, -1]);
    }

    #[test]
    fn retrieval_accuracy_on_clean_dictionary() {
        use crate::cluster::{ClusterAssignment, InstanceFeature};
        use crate::proxy::CprConfig;
        let features = vec![
            InstanceFeature::new(vec![1.0, 0.0]).unwrap(),
            InstanceFeature::new(vec![0.0, 1.0]).unwrap(),
        ];
        let assignment = ClusterAssignment { labels: vec![0, 1], cluster_count: 2 };
        let dict =
            ProxyDictionary::init_proxies(&features, &assignment, &CprConfig::default()).unwrap();
        let majorities = vec![7, 9];
        let heldout = vec![
            (vec![0.9, 0.1], 7),
            (vec![0.1, 0.9], 9),
            (vec![0.8, 0.2], 9), // wrong on purpose
        ];
        let acc = retrieval_accuracy(&dict, &majorities, &heldout);
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }
}
