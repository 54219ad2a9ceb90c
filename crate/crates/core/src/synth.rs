//! Synthetic noisy-pseudo-label scenarios.
//!
//! A scenario plants `G` mutually orthogonal identity directions on the unit
//! sphere and populates scenes with instances around them. Noise enters four
//! ways, mirroring what a detector-plus-clustering pipeline actually faces:
//!
//! - angular feature jitter around each identity direction (`feature_noise`),
//! - per-epoch re-detection jitter on bounding boxes (`box_noise`),
//! - contaminated instances whose feature is drawn from a wrong identity
//!   (`contamination`),
//! - spurious background "instances" with low-magnitude features
//!   (`clutter_rate` / `clutter_scale`).
//!
//! Instance appearances are rendered into `H x W x 2D` activation maps: each
//! latent dimension occupies a positive and a negative channel (rectified
//! split), scaled by a fixed spatial profile, plus a fresh half-normal noise
//! floor that is re-drawn every epoch. Everything is a pure function of
//! `(seed, epoch, instance)`, so runs are reproducible to the bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::boxes::BoundingBox;
use crate::cluster::NOISE;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

const TAG_CENTERS: u64 = 0x01;
const TAG_LATENT: u64 = 0x02;
const TAG_BOX_BASE: u64 = 0x03;
const TAG_CLUTTER: u64 = 0x04;
const TAG_HELDOUT: u64 = 0x05;
const TAG_MAP: u64 = 0x06;
const TAG_BOX_JITTER: u64 = 0x07;
pub(crate) const TAG_STACK_INIT: u64 = 0x08;

/// Spatial profile floor: every pixel of a signal channel carries at least
/// this fraction of the channel's amplitude. The bump above the floor keeps
/// part of the signal above any mean-derived threshold.
const PROFILE_FLOOR: f64 = 0.25;

/// SplitMix64-style mixing of `(seed, tag, index)` into one RNG seed.
pub(crate) fn mix_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, tag, index))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Scenario parameters. See the module docs for how each noise source acts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SyntheticScenario {
    /// Number of ground-truth identities (G).
    pub identities: usize,
    /// Number of identity-carrying instances (N); clutter comes on top.
    pub instances: usize,
    /// Latent feature dimension (D). Activation maps carry 2D channels.
    pub feature_dim: usize,
    /// Std of the gaussian jitter added to identity directions.
    pub feature_noise: f64,
    /// Std (pixels) of the per-epoch translation of pseudo boxes.
    pub box_noise: f64,
    /// Fraction of instances whose feature comes from a wrong identity.
    pub contamination: f64,
    /// Spurious background instances, as a fraction of `instances`.
    pub clutter_rate: f64,
    /// Latent magnitude of clutter instances.
    pub clutter_scale: f64,
    /// Std of the jitter used when drawing held-out query features.
    pub heldout_noise: f64,
    pub map_height: usize,
    pub map_width: usize,
    /// Scale of the half-normal per-pixel noise floor, re-drawn every epoch.
    pub map_noise: f64,
    pub instances_per_image: usize,
    pub heldout_per_identity: usize,
    /// Side length of the square image coordinate space.
    pub image_size: f64,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            identities: 10,
            instances: 500,
            feature_dim: 24,
            feature_noise: 0.01,
            box_noise: 2.0,
            contamination: 0.15,
            clutter_rate: 0.1,
            clutter_scale: 0.3,
            heldout_noise: 0.45,
            map_height: 8,
            map_width: 8,
            map_noise: 0.02,
            instances_per_image: 10,
            heldout_per_identity: 40,
            image_size: 128.0,
            seed: 7,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.identities == 0 {
            return fail("identities must be at least 1".into());
        }
        if self.instances < self.identities {
            return fail(format!(
                "instances ({}) must be at least identities ({})",
                self.instances, self.identities
            ));
        }
        if self.feature_dim < 2 {
            return fail("feature_dim must be at least 2".into());
        }
        if self.identities > self.feature_dim {
            return fail(format!(
                "identities ({}) must not exceed feature_dim ({}): identity directions are orthogonalized",
                self.identities, self.feature_dim
            ));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("box_noise", self.box_noise),
            ("map_noise", self.map_noise),
            ("heldout_noise", self.heldout_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [("contamination", self.contamination), ("clutter_rate", self.clutter_rate)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        let contaminated = (self.contamination * self.instances as f64).floor() as usize;
        if contaminated > 0 && self.identities < 2 {
            return fail("contamination needs at least 2 identities".into());
        }
        let clutter = (self.clutter_rate * self.instances as f64).floor() as usize;
        if clutter > 0 && self.feature_dim < 2 * self.identities {
            return fail(
                "clutter needs feature_dim >= 2 * identities (each identity's background direction lives in the orthogonal complement)"
                    .into(),
            );
        }
        if !(self.clutter_scale > 0.0) && clutter > 0 {
            return fail("clutter_scale must be positive when clutter is generated".into());
        }
        if self.map_height == 0 || self.map_width == 0 {
            return fail("map dimensions must be positive".into());
        }
        if self.instances_per_image == 0 {
            return fail("instances_per_image must be at least 1".into());
        }
        if self.heldout_per_identity == 0 {
            return fail("heldout_per_identity must be at least 1".into());
        }
        if !(self.image_size > 1.0) {
            return fail("image_size must exceed 1".into());
        }
        Ok(())
    }

    pub fn map_channels(&self) -> usize {
        2 * self.feature_dim
    }

    pub fn contaminated_count(&self) -> usize {
        (self.contamination * self.instances as f64).floor() as usize
    }

    pub fn clutter_count(&self) -> usize {
        (self.clutter_rate * self.instances as f64).floor() as usize
    }
}

/// One generated instance: the observable pseudo state plus the latent
/// appearance vector that drives map rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInstance {
    pub image_id: usize,
    /// Ground-truth box; per-epoch pseudo boxes jitter around it.
    pub gt_box: BoundingBox,
    /// Latent appearance encoded into the activation map.
    pub latent: Vec<f64>,
    /// Pseudo box of the most recent epoch.
    pub pseudo_box: BoundingBox,
    /// Extracted feature of the most recent epoch, unit-norm, if the
    /// instance survived filtering.
    pub feature: Option<Vec<f64>>,
    /// Pseudo identity of the most recent epoch (`-1` = noise).
    pub label: i64,
}

/// The dataset handed to the epoch loop. `epoch` counts completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledDataset {
    pub scenario: SyntheticScenario,
    pub instances: Vec<PseudoInstance>,
    pub epoch: usize,
}

/// Hidden ground truth, available to metrics only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub centers: Vec<Vec<f64>>,
    /// Per instance: identity id, or `-1` for clutter.
    pub identity: Vec<i64>,
    /// Per instance: the identity whose distribution generated the feature
    /// (differs from `identity` exactly for contaminated instances).
    pub feature_source: Vec<i64>,
    /// Held-out `(feature, identity)` queries for retrieval accuracy.
    pub heldout: Vec<(Vec<f64>, i64)>,
}

/// Mutually orthogonal unit directions via Gram-Schmidt on gaussian draws.
fn orthonormal_centers(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        attempts += 1;
        if attempts > 1000 * count {
            return Err(Error::InvalidConfig(
                "could not orthogonalize identity directions".into(),
            ));
        }
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for c in &centers {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= dot * ci;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.3 {
            centers.push(v.iter().map(|x| x / norm).collect());
        }
    }
    Ok(centers)
}

fn jittered_direction(center: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = center.iter().map(|c| c + sigma * normal(rng)).collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return center.to_vec();
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

fn random_box(size: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = size * rng.random_range(0.12..0.30);
    let h = size * rng.random_range(0.12..0.30);
    let cx = rng.random_range(0.15 * size..0.85 * size);
    let cy = rng.random_range(0.15 * size..0.85 * size);
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
        .expect("constructed box is valid")
}

/// Builds the dataset and its hidden ground truth. Deterministic in the
/// scenario seed: the same configuration reproduces the same bytes.
pub fn generate_scenario(cfg: &SyntheticScenario) -> Result<(PseudoLabeledDataset, GroundTruth)> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let g = cfg.identities;
    let n = cfg.instances;

    let n_clutter = cfg.clutter_count();
    let mut center_rng = stream(cfg.seed, TAG_CENTERS, 0);
    // identity directions, plus one background direction per identity in the
    // orthogonal complement when clutter is generated
    let directions = orthonormal_centers(if n_clutter > 0 { 2 * g } else { g }, dim, &mut center_rng)?;
    let centers: Vec<Vec<f64>> = directions[..g].to_vec();

    let total = n + n_clutter;
    let image_count = total.div_ceil(cfg.instances_per_image);

    let mut instances = Vec::with_capacity(total);
    let mut identity = Vec::with_capacity(total);
    let mut feature_source = Vec::with_capacity(total);

    // clutter comes first in dataset (and therefore update) order: stale
    // background evidence is the first thing later updates overwrite
    for j in 0..n_clutter {
        let mut rng = stream(cfg.seed, TAG_CLUTTER, j as u64);
        let target = j % g;
        let lean: f64 = rng.random_range(0.82..0.88);
        let orth = (1.0 - lean * lean).sqrt();
        let background = &directions[g + target];
        let latent: Vec<f64> = centers[target]
            .iter()
            .zip(background)
            .map(|(c, u)| cfg.clutter_scale * (lean * c + orth * u))
            .collect();
        let mut box_rng = stream(cfg.seed, TAG_BOX_BASE, j as u64);
        let gt_box = random_box(cfg.image_size, &mut box_rng);
        instances.push(PseudoInstance {
            image_id: j % image_count,
            gt_box,
            latent,
            pseudo_box: gt_box,
            feature: None,
            label: NOISE,
        });
        identity.push(-1);
        feature_source.push(-1);
    }

    let contaminated = cfg.contaminated_count();
    for i in 0..n {
        let gt = i % g;
        let mut rng = stream(cfg.seed, TAG_LATENT, i as u64);
        let (source, latent) = if i < contaminated {
            // a misidentified instance: its feature sits in the next
            // identity's region, leaning back toward its own, so it joins
            // the wrong cluster and drags that cluster's mean off-center
            let donor = (gt + 1) % g;
            let own_weight: f64 = rng.random_range(0.15..0.30);
            let mixed: Vec<f64> = centers[donor]
                .iter()
                .zip(&centers[gt])
                .map(|(d, o)| (1.0 - own_weight) * d + own_weight * o)
                .collect();
            (donor, jittered_direction(&mixed, cfg.feature_noise, &mut rng))
        } else {
            (gt, jittered_direction(&centers[gt], cfg.feature_noise, &mut rng))
        };
        let mut box_rng = stream(cfg.seed, TAG_BOX_BASE, (n_clutter + i) as u64);
        let gt_box = random_box(cfg.image_size, &mut box_rng);
        instances.push(PseudoInstance {
            image_id: (n_clutter + i) % image_count,
            gt_box,
            latent,
            pseudo_box: gt_box,
            feature: None,
            label: NOISE,
        });
        identity.push(gt as i64);
        feature_source.push(source as i64);
    }

    let mut heldout = Vec::with_capacity(g * cfg.heldout_per_identity);
    for gid in 0..g {
        let mut rng = stream(cfg.seed, TAG_HELDOUT, gid as u64);
        for _ in 0..cfg.heldout_per_identity {
            heldout.push((jittered_direction(&centers[gid], cfg.heldout_noise, &mut rng), gid as i64));
        }
    }

    Ok((
        PseudoLabeledDataset { scenario: cfg.clone(), instances, epoch: 0 },
        GroundTruth { centers, identity, feature_source, heldout },
    ))
}

/// Renders the activation map an instance presents at a given epoch: the
/// rectified latent split over positive/negative channel pairs, scaled by a
/// radially decaying spatial profile, plus a fresh half-normal noise floor.
pub fn render_map(
    cfg: &SyntheticScenario,
    latent: &[f64],
    epoch: usize,
    instance_idx: usize,
) -> Result<FeatureMap> {
    let (h, w) = (cfg.map_height, cfg.map_width);
    let dim = latent.len();
    let mut rng = stream(
        cfg.seed,
        TAG_MAP,
        ((epoch as u64) << 32) | instance_idx as u64,
    );
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let sigma_p = 0.35 * h.min(w) as f64;
    let mut map = FeatureMap::zeros(h, w, 2 * dim)?;
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let profile = PROFILE_FLOOR + (1.0 - PROFILE_FLOOR) * (-d2 / (2.0 * sigma_p * sigma_p)).exp();
            for c in 0..2 * dim {
                let lift = if c < dim { latent[c].max(0.0) } else { (-latent[c - dim]).max(0.0) };
                let noise = cfg.map_noise * normal(&mut rng).abs();
                map.set(y, x, c, lift * profile + noise);
            }
        }
    }
    Ok(map)
}

/// The pseudo box an instance is re-detected at in a given epoch: the
/// ground-truth box under a fresh gaussian translation.
pub fn jittered_box(
    cfg: &SyntheticScenario,
    gt_box: &BoundingBox,
    epoch: usize,
    instance_idx: usize,
) -> BoundingBox {
    let mut rng = stream(
        cfg.seed,
        TAG_BOX_JITTER,
        ((epoch as u64) << 32) | instance_idx as u64,
    );
    let dx = cfg.box_noise * normal(&mut rng);
    let dy = cfg.box_noise * normal(&mut rng);
    gt_box.translated(dx, dy)
}
