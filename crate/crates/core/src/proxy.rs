//! Cluster-proxy memory.
//!
//! Every cluster owns exactly one proxy vector; the dictionary therefore
//! stores `K * D` values no matter how many instances the clusters hold.
//! Queries hit a softmax over proxy similarities (the look-up-table
//! contrastive loss); updates are a momentum blend toward the latest member
//! feature, so stale or polluted directions decay geometrically. Once per
//! epoch the whole dictionary is rebuilt from cluster means of features
//! smoothed against the previous epoch by bounding-box association.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::{match_previous, BoundingBox};
use crate::cluster::{ClusterAssignment, InstanceFeature, NOISE};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Update parameters for the proxy memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CprConfig {
    /// Momentum of the online proxy update.
    pub gamma: f64,
    /// Smoothing factor of the offline across-epoch average.
    pub m: f64,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
}

impl Default for CprConfig {
    fn default() -> Self {
        Self { gamma: 0.2, m: 0.2, temperature: 0.05 }
    }
}

impl CprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::InvalidConfig(format!("m must lie in [0, 1], got {}", self.m)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One instance as remembered across epochs: where it was detected, what it
/// looked like, and which image it came from.
#[derive(Debug, Clone)]
pub struct SnapshotEntry {
    pub bbox: BoundingBox,
    pub feature: InstanceFeature,
    pub image_id: usize,
}

/// All instances extracted by one epoch, consumed by the next epoch's
/// offline re-initialization.
#[derive(Debug, Clone, Default)]
pub struct EpochSnapshot {
    pub instances: Vec<SnapshotEntry>,
}

impl EpochSnapshot {
    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Sidecar metadata stored next to a dictionary checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    k: usize,
    dim: usize,
    temperature: f64,
    gamma: f64,
}

/// The proxy dictionary: one unit vector per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyDictionary {
    proxies: Vec<Vec<f64>>,
    dim: usize,
    temperature: f64,
    gamma: f64,
}

/// The raw momentum blend `(1 - gamma) * c + gamma * f`, before
/// re-normalization. Iterating this with a constant `f` contracts the gap to
/// `f` by a factor `(1 - gamma)` per step.
pub fn momentum_blend(proxy: &[f64], feature: &[f64], gamma: f64) -> Vec<f64> {
    proxy
        .iter()
        .zip(feature)
        .map(|(c, f)| (1.0 - gamma) * c + gamma * f)
        .collect()
}

impl ProxyDictionary {
    /// Builds one proxy per cluster: the cluster mean, L2-normalized.
    pub fn init_proxies(
        features: &[InstanceFeature],
        assignment: &ClusterAssignment,
        cfg: &CprConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let smoothed: Vec<Vec<f64>> =
            features.iter().map(|f| f.values().to_vec()).collect();
        Self::from_member_features(&smoothed, assignment, cfg)
    }

    /// Rebuilds the dictionary from the current epoch's instances, smoothing
    /// each member with its previous-epoch counterpart when the bounding box
    /// recurs (same image, overlap at least the match threshold):
    /// `smoothed = m * previous + (1 - m) * current`. Instances without a
    /// recurring box, and every instance when `m = 0` or the snapshot is
    /// empty, keep their current feature bit for bit.
    pub fn offline_reinit(
        current: &[SnapshotEntry],
        assignment: &ClusterAssignment,
        snapshot: &EpochSnapshot,
        cfg: &CprConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if current.len() != assignment.labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", current.len()),
                got: format!("{}", assignment.labels.len()),
            });
        }
        let mut smoothed = Vec::with_capacity(current.len());
        for entry in current {
            let feature = entry.feature.values();
            if cfg.m == 0.0 || snapshot.is_empty() {
                smoothed.push(feature.to_vec());
                continue;
            }
            // previous-epoch candidates from the same image
            let candidate_idx: Vec<usize> = snapshot
                .instances
                .iter()
                .enumerate()
                .filter(|(_, e)| e.image_id == entry.image_id)
                .map(|(i, _)| i)
                .collect();
            let candidate_boxes: Vec<BoundingBox> =
                candidate_idx.iter().map(|&i| snapshot.instances[i].bbox).collect();
            match match_previous(&entry.bbox, &candidate_boxes).index {
                Some(local) => {
                    let prev = snapshot.instances[candidate_idx[local]].feature.values();
                    smoothed.push(
                        prev.iter()
                            .zip(feature)
                            .map(|(p, f)| cfg.m * p + (1.0 - cfg.m) * f)
                            .collect(),
                    );
                }
                None => smoothed.push(feature.to_vec()),
            }
        }
        Self::from_member_features(&smoothed, assignment, cfg)
    }

    fn from_member_features(
        features: &[Vec<f64>],
        assignment: &ClusterAssignment,
        cfg: &CprConfig,
    ) -> Result<Self> {
        if features.len() != assignment.labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", features.len()),
                got: format!("{}", assignment.labels.len()),
            });
        }
        if assignment.cluster_count == 0 {
            return Err(Error::EmptyDictionary(
                "clustering produced only noise; training cannot proceed".into(),
            ));
        }
        let dim = features
            .first()
            .map(|f| f.len())
            .ok_or_else(|| Error::InvalidConfig("no features".into()))?;
        let mut sums = vec![vec![0.0; dim]; assignment.cluster_count];
        let mut counts = vec![0usize; assignment.cluster_count];
        for (f, &label) in features.iter().zip(&assignment.labels) {
            if label == NOISE {
                continue;
            }
            let k = label as usize;
            counts[k] += 1;
            for (s, v) in sums[k].iter_mut().zip(f) {
                *s += v;
            }
        }
        let mut proxies = Vec::with_capacity(assignment.cluster_count);
        for (mut sum, count) in sums.into_iter().zip(counts) {
            if count == 0 {
                return Err(Error::EmptyDictionary("empty cluster in assignment".into()));
            }
            for v in sum.iter_mut() {
                *v /= count as f64;
            }
            proxies.push(crate::cluster::l2_normalize_slice(&sum)?);
        }
        Ok(Self { proxies, dim, temperature: cfg.temperature, gamma: cfg.gamma })
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn proxy(&self, k: usize) -> &[f64] {
        &self.proxies[k]
    }

    /// Number of stored values: exactly `K * D`, independent of how many
    /// instances the clusters contain.
    pub fn value_count(&self) -> usize {
        self.proxies.iter().map(|p| p.len()).sum()
    }

    fn check_cluster(&self, k: usize) -> Result<()> {
        if k >= self.proxies.len() {
            return Err(Error::InvalidClusterId { id: k, count: self.proxies.len() });
        }
        Ok(())
    }

    /// Softmax cross-entropy of `feature` against the dictionary with
    /// positive proxy `k`, plus the gradient with respect to the feature.
    /// Logits are `f . c_j / temperature`, stabilized by max subtraction.
    pub fn contrastive_loss(&self, feature: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
        self.check_cluster(k)?;
        if feature.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("feature of dimension {}", self.dim),
                got: format!("{}", feature.len()),
            });
        }
        let logits: Vec<f64> = self
            .proxies
            .iter()
            .map(|c| c.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>() / self.temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp_sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let loss = -(logits[k] - max) + exp_sum.ln();

        let mut grad = vec![0.0; self.dim];
        for (j, c) in self.proxies.iter().enumerate() {
            let p = (logits[j] - max).exp() / exp_sum;
            let weight = (p - if j == k { 1.0 } else { 0.0 }) / self.temperature;
            for (g, v) in grad.iter_mut().zip(c) {
                *g += weight * v;
            }
        }
        Ok((loss, grad))
    }

    /// Momentum update of proxy `k` toward `feature`, then re-normalization.
    /// `gamma = 0` is the identity; `gamma = 1` replaces the proxy outright.
    pub fn online_update(&mut self, feature: &[f64], k: usize) -> Result<()> {
        self.check_cluster(k)?;
        if feature.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("feature of dimension {}", self.dim),
                got: format!("{}", feature.len()),
            });
        }
        if self.gamma == 0.0 {
            return Ok(());
        }
        let blended = momentum_blend(&self.proxies[k], feature, self.gamma);
        self.proxies[k] = crate::cluster::l2_normalize_slice(&blended)?;
        Ok(())
    }

    /// Writes the proxies as a `K x 1 x D` tensor next to a JSON sidecar
    /// carrying `(K, D, temperature, gamma)`.
    pub fn save(&self, tensor_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for p in &self.proxies {
            data.extend_from_slice(p);
        }
        let map = FeatureMap::new(self.len(), 1, self.dim, data)?;
        let mut file = std::fs::File::create(tensor_path)?;
        map.write(&mut file)?;
        let meta = CheckpointMeta {
            k: self.len(),
            dim: self.dim,
            temperature: self.temperature,
            gamma: self.gamma,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Parse(format!("sidecar serialization failed: {e}")))?;
        std::fs::write(sidecar_path, json + "\n")?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ProxyDictionary::save`].
    pub fn load(tensor_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let file = std::fs::File::open(tensor_path)?;
        let map = FeatureMap::read(std::io::BufReader::new(file))?;
        let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)
            .map_err(|e| Error::Parse(format!("sidecar parse failed: {e}")))?;
        if map.height() != meta.k || map.channels() != meta.dim || map.width() != 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x 1 x {} checkpoint tensor", meta.k, meta.dim),
                got: format!("{} x {} x {}", map.height(), map.width(), map.channels()),
            });
        }
        let proxies: Vec<Vec<f64>> = (0..meta.k)
            .map(|k| (0..meta.dim).map(|d| map.get(k, 0, d)).collect())
            .collect();
        Ok(Self { proxies, dim: meta.dim, temperature: meta.temperature, gamma: meta.gamma })
    }
}
