//! Density clustering of instance features under cosine distance.
//!
//! Pseudo-identities come from DBSCAN: core points have at least
//! `min_samples` neighbors within `eps` (self included), clusters are maximal
//! density-connected sets, everything unreachable is noise. The scan is
//! deterministic: cluster ids are assigned in order of first core-point
//! discovery and border points join the first core point that claims them
//! during the breadth-first expansion.

use crate::error::{Error, Result};

/// Label assigned to points that belong to no cluster.
pub const NOISE: i64 = -1;

/// One instance embedding. `unit_norm` records whether the vector has been
/// L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeature {
    values: Vec<f64>,
    unit_norm: bool,
}

impl InstanceFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("feature must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature entry".into()));
        }
        Ok(Self { values, unit_norm: false })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Wraps values already known to be unit-norm.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!({
            let n: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n - 1.0).abs() < 1e-6
        });
        Self { values, unit_norm: true }
    }
}

/// Scales a vector to unit length, preserving direction. Zero vectors are
/// degenerate input.
pub fn l2_normalize(feature: &InstanceFeature) -> Result<InstanceFeature> {
    let scaled = l2_normalize_slice(feature.values())?;
    Ok(InstanceFeature { values: scaled, unit_norm: true })
}

pub(crate) fn l2_normalize_slice(values: &[f64]) -> Result<Vec<f64>> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot normalize a zero-length vector".into(),
        ));
    }
    Ok(values.iter().map(|v| v / norm).collect())
}

/// `1 - cos(u, v)`; zero for identical directions, 2 for antipodal.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    1.0 - dot / (nu.sqrt() * nv.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DbscanConfig {
    /// Cosine-distance neighborhood radius.
    pub eps: f64,
    /// Density floor: neighbors (self included) needed to make a core point.
    pub min_samples: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: 0.6, min_samples: 4 }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_samples == 0 {
            return Err(Error::InvalidConfig("min_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-instance labels: `NOISE` or a cluster id in `0..cluster_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    pub fn clustered_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != NOISE).count()
    }
}

/// DBSCAN under cosine distance.
pub fn dbscan(features: &[InstanceFeature], cfg: &DbscanConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::InvalidConfig("dbscan needs at least one feature".into()));
    }
    let dim = features[0].dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::ShapeMismatch {
            expected: format!("features of dimension {dim}"),
            got: format!("{}", bad.dim()),
        });
    }
    // unit-normalize once so the neighborhood test is a dot-product threshold
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(features.len());
    for f in features {
        unit.push(l2_normalize_slice(f.values())?);
    }
    let n = unit.len();
    let dot_floor = 1.0 - cfg.eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let d: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                d >= dot_floor
            })
            .collect()
    };

    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let seed_neighbors = neighbors(i);
        if seed_neighbors.len() < cfg.min_samples {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = seed_neighbors.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                // border point: claimed by the first core point that reaches it
                labels[j] = cluster;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let next = neighbors(j);
            if next.len() >= cfg.min_samples {
                queue.extend(next);
            }
        }
        cluster += 1;
    }
    Ok(ClusterAssignment { labels, cluster_count: cluster as usize })
}

/// Per-cluster feature means; noise instances contribute to nothing.
pub fn cluster_means(
    features: &[InstanceFeature],
    assignment: &ClusterAssignment,
) -> Result<Vec<Vec<f64>>> {
    if features.len() != assignment.labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", features.len()),
            got: format!("{}", assignment.labels.len()),
        });
    }
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let dim = features[0].dim();
    let mut sums = vec![vec![0.0; dim]; assignment.cluster_count];
    let mut counts = vec![0usize; assignment.cluster_count];
    for (f, &label) in features.iter().zip(&assignment.labels) {
        if label == NOISE {
            continue;
        }
        let k = label as usize;
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(f.values()) {
            *s += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        debug_assert!(count > 0, "clusters are non-empty by construction");
        for v in sum.iter_mut() {
            *v /= count as f64;
        }
    }
    Ok(sums)
}
