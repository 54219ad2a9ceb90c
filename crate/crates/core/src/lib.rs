//! Noise-calibration building blocks for pseudo-labeled training pipelines.
//!
//! The crate has two halves. The first is an adaptive feature filter: dense
//! activation maps are thresholded per channel, with the threshold predicted
//! from pooled channel statistics ([`pdaf`]) and the shrinkage curve itself
//! calibrated by a learnable per-channel blend weight ([`filter`]). The second
//! is a cluster-proxy memory ([`proxy`]): instances clustered by [`cluster`]
//! share a single proxy vector each, queried by a contrastive loss and kept
//! fresh through momentum updates and an across-epoch moving average keyed on
//! bounding-box overlap ([`boxes`]).
//!
//! [`synth`] and [`pipeline`] wire both halves into a reproducible synthetic
//! benchmark: scenarios with noisy features, jittered boxes, contaminated
//! identities and background clutter, driven through an alternating two-phase
//! epoch loop with calibration metrics ([`metrics`]). [`gradcheck`] holds the
//! finite-difference batteries that guard every analytic gradient.

pub mod boxes;
pub mod cluster;
pub mod error;
pub mod filter;
pub mod gradcheck;
pub mod metrics;
pub mod pdaf;
pub mod pipeline;
pub mod proxy;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
