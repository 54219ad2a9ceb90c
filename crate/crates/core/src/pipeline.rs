//! The alternating two-phase epoch loop over a synthetic scenario.
//!
//! Phase 1 (re-labeling): every instance's map is re-rendered for the epoch,
//! pushed through the filter stack, read out into a feature, clustered, and
//! the proxy dictionary is rebuilt from cluster means smoothed against the
//! previous epoch's snapshot. Phase 2 (training): instances stream through in
//! batches; each batch's contrastive losses are computed against the
//! dictionary, then the positive proxies take their momentum updates, and the
//! filter parameters take one descent step on the batch-mean gradients.
//!
//! The stack is two filter stages deep. Features are read out of the final
//! map by average-pooling each channel and differencing the positive and
//! negative channel of every latent dimension; readouts whose norm falls
//! below `norm_floor` count as fully suppressed and are excluded from
//! clustering and training for that epoch.

use crate::cluster::{dbscan, ClusterAssignment, DbscanConfig, InstanceFeature, NOISE};
use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::metrics::{
    adjusted_rand_index, cluster_majorities, purity, retrieval_accuracy, CalibrationMetrics,
};
use crate::pdaf::{stage_backward, stage_forward, MlpParams, PdafCache};
use crate::proxy::{CprConfig, EpochSnapshot, ProxyDictionary, SnapshotEntry};
use crate::synth::{
    generate_scenario, jittered_box, render_map, stream, GroundTruth, PseudoLabeledDataset,
    SyntheticScenario, TAG_STACK_INIT,
};
use crate::tensor::{avg_pool, FeatureMap};

/// Which mechanisms are active. Disabling the threshold predictor removes
/// the perception pathway: the threshold collapses to a fixed half of the
/// channel mean instead of a per-scene predicted scaling. Disabling the
/// calibrated filter falls back to the soft threshold (blend weight pinned
/// at zero). Disabling the proxy memory degrades updates to naive per-epoch
/// re-initialization (full-replacement momentum, no across-epoch smoothing).
/// With both filter components off the stack passes maps through untouched.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Components {
    pub pdt: bool,
    pub scf: bool,
    pub cpr: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self { pdt: true, scf: true, cpr: true }
    }
}

impl Components {
    pub fn all_off() -> Self {
        Self { pdt: false, scf: false, cpr: false }
    }
}

/// Epoch-loop parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs during which filter parameters stay frozen.
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Initial blend weight of the calibrated filter.
    pub lambda_init: f64,
    /// Channel reduction of the threshold predictor's hidden layer.
    pub reduction: usize,
    /// Number of stacked filter stages.
    pub stages: usize,
    /// Readouts with a smaller norm count as fully suppressed.
    pub norm_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            pretrain_epochs: 1,
            learning_rate: 0.01,
            batch_size: 4,
            lambda_init: 0.0,
            reduction: 2,
            stages: 2,
            norm_floor: 1e-9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be nonnegative, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.lambda_init) {
            return fail(format!("lambda_init must lie in [0, 1], got {}", self.lambda_init));
        }
        if self.reduction == 0 {
            return fail("reduction must be at least 1".into());
        }
        if self.stages == 0 {
            return fail("stages must be at least 1".into());
        }
        if !(self.norm_floor > 0.0) {
            return fail("norm_floor must be positive".into());
        }
        Ok(())
    }
}

struct Stage {
    mlp: Option<MlpParams>,
    params: FilterParams,
}

/// The toy extraction stack: a chain of adaptive filter stages over the
/// rendered map, then the pooled positive/negative channel difference.
pub struct ToyStack {
    stages: Vec<Stage>,
    channels: usize,
    feature_dim: usize,
}

/// One extraction: the raw (pre-normalization) feature, the final map, and
/// the per-stage caches needed to push gradients back.
pub struct Extraction {
    pub raw: Vec<f64>,
    pub output: FeatureMap,
    caches: Vec<PdafCache>,
}

impl Extraction {
    pub fn caches(&self) -> &[PdafCache] {
        &self.caches
    }
}

/// Per-stage parameter gradients accumulated over a batch.
pub struct StackGradients {
    stages: Vec<(Option<MlpParams>, Vec<f64>)>,
}

impl StackGradients {
    fn accumulate(&mut self, other: StackGradients) {
        for ((mlp_a, lam_a), (mlp_b, lam_b)) in self.stages.iter_mut().zip(other.stages) {
            if let (Some(a), Some(b)) = (mlp_a.as_mut(), mlp_b.as_ref()) {
                a.accumulate(b);
            }
            for (x, y) in lam_a.iter_mut().zip(&lam_b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (mlp, lam) in self.stages.iter_mut() {
            if let Some(m) = mlp {
                m.scale(factor);
            }
            for v in lam.iter_mut() {
                *v *= factor;
            }
        }
    }
}

impl ToyStack {
    /// Builds the stack for `channels = 2 * feature_dim` map channels. MLPs
    /// are seeded deterministically from the scenario seed.
    pub fn new(
        feature_dim: usize,
        components: &Components,
        train_cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let channels = 2 * feature_dim;
        let mut stages = Vec::new();
        if components.pdt || components.scf {
            for s in 0..train_cfg.stages {
                let mlp = if components.pdt {
                    let mut rng = stream(seed, TAG_STACK_INIT, s as u64);
                    Some(MlpParams::random(channels, train_cfg.reduction, &mut rng)?)
                } else {
                    None
                };
                let lambda_init = if components.scf { train_cfg.lambda_init } else { 0.0 };
                let params = FilterParams::with_lambda(vec![lambda_init; channels], 2)?;
                stages.push(Stage { mlp, params });
            }
        }
        Ok(Self { stages, channels, feature_dim })
    }

    pub fn is_filtering(&self) -> bool {
        !self.stages.is_empty()
    }

    pub fn stage_lambda(&self, stage: usize) -> &[f64] {
        self.stages[stage].params.lambda()
    }

    fn readout(&self, map: &FeatureMap) -> Vec<f64> {
        let pooled = avg_pool(map);
        (0..self.feature_dim).map(|d| pooled[d] - pooled[d + self.feature_dim]).collect()
    }

    /// Runs the stack and the pooled readout.
    pub fn extract(&self, map: &FeatureMap) -> Result<Extraction> {
        if map.channels() != self.channels {
            return Err(Error::ShapeMismatch {
                expected: format!("map with {} channels", self.channels),
                got: format!("{}", map.channels()),
            });
        }
        let mut current = map.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (out, cache) = stage_forward(&current, stage.mlp.as_ref(), &stage.params)?;
            caches.push(cache);
            current = out;
        }
        let raw = self.readout(&current);
        Ok(Extraction { raw, output: current, caches })
    }

    /// Pushes a gradient on the raw readout back through the pooled
    /// difference and every filter stage.
    pub fn backward(&self, extraction: &Extraction, d_raw: &[f64]) -> Result<StackGradients> {
        let (h, w) = (extraction.output.height(), extraction.output.width());
        let area = (h * w) as f64;
        let dim = self.feature_dim;
        let mut d_map = FeatureMap::from_fn(h, w, self.channels, |_, _, c| {
            if c < dim { d_raw[c] / area } else { -d_raw[c - dim] / area }
        })?;
        let mut stages = vec![];
        for cache in extraction.caches.iter().rev() {
            let grads = stage_backward(cache, &d_map)?;
            d_map = grads.d_input;
            stages.push((grads.d_mlp, grads.d_lambda));
        }
        stages.reverse();
        Ok(StackGradients { stages })
    }

    fn zero_gradients(&self) -> StackGradients {
        StackGradients {
            stages: self
                .stages
                .iter()
                .map(|s| (s.mlp.as_ref().map(|m| m.zeros_like()), vec![0.0; self.channels]))
                .collect(),
        }
    }

    /// One descent step. The blend weights move only when the calibrated
    /// filter is enabled; the threshold predictor moves only when present.
    pub fn sgd_step(
        &mut self,
        grads: &StackGradients,
        learning_rate: f64,
        train_mlp: bool,
        train_lambda: bool,
    ) -> Result<()> {
        for (stage, (d_mlp, d_lambda)) in self.stages.iter_mut().zip(&grads.stages) {
            if train_mlp {
                if let (Some(mlp), Some(g)) = (stage.mlp.as_mut(), d_mlp.as_ref()) {
                    mlp.sgd_step(g, learning_rate);
                }
            }
            if train_lambda {
                stage.params.sgd_step(d_lambda, learning_rate)?;
            }
        }
        Ok(())
    }
}

/// Gradient of `raw / ||raw||` composed with a gradient on the normalized
/// feature.
fn normalize_backward(raw: &[f64], norm: f64, d_unit: &[f64]) -> Vec<f64> {
    let unit: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let dot: f64 = unit.iter().zip(d_unit).map(|(a, b)| a * b).sum();
    unit.iter().zip(d_unit).map(|(u, d)| (d - u * dot) / norm).collect()
}

/// Everything one epoch leaves behind.
pub struct EpochOutcome {
    pub dictionary: ProxyDictionary,
    pub snapshot: EpochSnapshot,
    pub metrics: CalibrationMetrics,
    pub assignment: ClusterAssignment,
}

/// Runs one alternating epoch over the dataset, mutating the dataset's
/// pseudo-labels, pseudo-boxes and stored features in place.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    dataset: &mut PseudoLabeledDataset,
    truth: &GroundTruth,
    stack: &mut ToyStack,
    snapshot: &EpochSnapshot,
    dbscan_cfg: &DbscanConfig,
    cpr_cfg: &CprConfig,
    train_cfg: &TrainConfig,
    components: &Components,
) -> Result<EpochOutcome> {
    dbscan_cfg.validate()?;
    cpr_cfg.validate()?;
    train_cfg.validate()?;
    let epoch = dataset.epoch + 1;
    let cfg = dataset.scenario.clone();
    let effective_cpr = if components.cpr {
        *cpr_cfg
    } else {
        CprConfig { gamma: 1.0, m: 0.0, temperature: cpr_cfg.temperature }
    };

    // phase 1: re-render, re-extract, re-label, re-initialize the dictionary
    let mut maps = Vec::with_capacity(dataset.instances.len());
    let mut unit_features: Vec<Option<Vec<f64>>> = Vec::with_capacity(dataset.instances.len());
    let mut clutter_entries = 0usize;
    let mut clutter_zeroed = 0usize;
    for (idx, instance) in dataset.instances.iter_mut().enumerate() {
        let map = render_map(&cfg, &instance.latent, epoch, idx)?;
        let extraction = stack.extract(&map)?;
        if truth.identity[idx] < 0 {
            clutter_entries += extraction.output.as_slice().len();
            clutter_zeroed += extraction.output.as_slice().iter().filter(|&&v| v == 0.0).count();
        }
        let norm: f64 = extraction.raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > train_cfg.norm_floor {
            unit_features.push(Some(extraction.raw.iter().map(|v| v / norm).collect()));
        } else {
            unit_features.push(None);
        }
        instance.pseudo_box = jittered_box(&cfg, &instance.gt_box, epoch, idx);
        maps.push(map);
    }

    let valid: Vec<usize> = (0..dataset.instances.len())
        .filter(|&i| unit_features[i].is_some())
        .collect();
    if valid.is_empty() {
        return Err(Error::EmptyDictionary(format!(
            "epoch {epoch}: every readout was suppressed below the norm floor"
        )));
    }
    let features: Vec<InstanceFeature> = valid
        .iter()
        .map(|&i| InstanceFeature::from_unit(unit_features[i].clone().expect("valid index")))
        .collect();
    let assignment = dbscan(&features, dbscan_cfg)?;
    if assignment.cluster_count == 0 {
        return Err(Error::EmptyDictionary(format!(
            "epoch {epoch}: clustering labeled all {} instances as noise (eps {}, min_samples {})",
            valid.len(),
            dbscan_cfg.eps,
            dbscan_cfg.min_samples
        )));
    }

    for instance in dataset.instances.iter_mut() {
        instance.label = NOISE;
        instance.feature = None;
    }
    for (slot, &idx) in valid.iter().enumerate() {
        dataset.instances[idx].label = assignment.labels[slot];
        dataset.instances[idx].feature = unit_features[idx].clone();
    }

    let entries: Vec<SnapshotEntry> = valid
        .iter()
        .zip(&features)
        .map(|(&idx, feature)| SnapshotEntry {
            bbox: dataset.instances[idx].pseudo_box,
            feature: feature.clone(),
            image_id: dataset.instances[idx].image_id,
        })
        .collect();
    let mut dictionary =
        ProxyDictionary::offline_reinit(&entries, &assignment, snapshot, &effective_cpr)?;

    // phase 2: batched contrastive loss, momentum updates, filter training.
    // Pre-train epochs build and evaluate the dictionary but leave it and the
    // filter parameters untouched, mirroring a source-only warm-up before
    // joint training starts.
    let warmup = epoch <= train_cfg.pretrain_epochs;
    let frozen = warmup || train_cfg.learning_rate == 0.0;
    let trainable: Vec<usize> = valid
        .iter()
        .copied()
        .filter(|&idx| dataset.instances[idx].label >= 0)
        .collect();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for batch in trainable.chunks(train_cfg.batch_size) {
        let mut grads = stack.zero_gradients();
        let mut graded = 0usize;
        let mut updates: Vec<(Vec<f64>, usize)> = Vec::with_capacity(batch.len());
        for &idx in batch {
            let extraction = stack.extract(&maps[idx])?;
            let norm: f64 = extraction.raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= train_cfg.norm_floor {
                continue;
            }
            let unit: Vec<f64> = extraction.raw.iter().map(|v| v / norm).collect();
            let k = dataset.instances[idx].label as usize;
            let (loss, d_unit) = dictionary.contrastive_loss(&unit, k)?;
            loss_sum += loss;
            loss_count += 1;
            if !frozen && stack.is_filtering() {
                let d_raw = normalize_backward(&extraction.raw, norm, &d_unit);
                grads.accumulate(stack.backward(&extraction, &d_raw)?);
                graded += 1;
            }
            updates.push((unit, k));
        }
        // the whole batch's losses see one consistent dictionary; updates land after
        if !warmup {
            for (feature, k) in updates {
                dictionary.online_update(&feature, k)?;
            }
        }
        if graded > 0 {
            grads.scale(1.0 / graded as f64);
            stack.sgd_step(&grads, train_cfg.learning_rate, components.pdt, components.scf)?;
        }
    }

    let full_labels: Vec<i64> = dataset.instances.iter().map(|i| i.label).collect();
    let majorities = cluster_majorities(&full_labels, &truth.identity, assignment.cluster_count);
    let metrics = CalibrationMetrics {
        epoch,
        purity: purity(&full_labels, &truth.identity, assignment.cluster_count),
        ari: adjusted_rand_index(&full_labels, &truth.identity),
        retrieval_acc: retrieval_accuracy(&dictionary, &majorities, &truth.heldout),
        mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
        filtered_clutter_rate: if clutter_entries > 0 {
            clutter_zeroed as f64 / clutter_entries as f64
        } else {
            0.0
        },
    };

    dataset.epoch = epoch;
    Ok(EpochOutcome { dictionary, snapshot: EpochSnapshot { instances: entries }, metrics, assignment })
}

/// A full multi-epoch run.
pub struct TrainingRun {
    pub metrics: Vec<CalibrationMetrics>,
    pub dictionary: ProxyDictionary,
    pub cluster_count: usize,
    pub dataset: PseudoLabeledDataset,
    /// The trained extraction stack, for inspection and re-use.
    pub stack: ToyStack,
}

/// Generates the scenario and drives the epoch loop to completion.
pub fn run_training(
    scenario: &SyntheticScenario,
    dbscan_cfg: &DbscanConfig,
    cpr_cfg: &CprConfig,
    train_cfg: &TrainConfig,
    components: &Components,
) -> Result<TrainingRun> {
    train_cfg.validate()?;
    let (mut dataset, truth) = generate_scenario(scenario)?;
    let mut stack = ToyStack::new(scenario.feature_dim, components, train_cfg, scenario.seed)?;
    let mut snapshot = EpochSnapshot::default();
    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    let mut dictionary = None;
    let mut cluster_count = 0;
    for _ in 0..train_cfg.epochs {
        let outcome = run_epoch(
            &mut dataset,
            &truth,
            &mut stack,
            &snapshot,
            dbscan_cfg,
            cpr_cfg,
            train_cfg,
            components,
        )?;
        snapshot = outcome.snapshot;
        cluster_count = outcome.assignment.cluster_count;
        metrics.push(outcome.metrics);
        dictionary = Some(outcome.dictionary);
    }
    Ok(TrainingRun {
        metrics,
        dictionary: dictionary.expect("at least one epoch ran"),
        cluster_count,
        dataset,
        stack,
    })
}
